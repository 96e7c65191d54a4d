"""
Visualization utilities for training timelines and partition balance.

This module provides the TimelineVisualizer class: a Gantt chart of the two
lanes of every worker, runtime breakdown bars, a heatmap of tile nonzeros,
per-stage balance curves and the density study plot.

Typical usage example:
    viz = TimelineVisualizer(group.timeline.events())
    fig = viz.plot_timeline(workers=[0, 1])
    fig.savefig('reports/timeline.png')

Author: MGGCN maintainers
Date: October 2026
"""

from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from .collectives import COMM_LANE, TimelineEvent
from .data_profiler import BUCKETS, BreakdownReport, events_frame
from .partitioner import BalanceReport


KIND_COLORS = {
    'broadcast': '#f2c14e', 'reduce': '#f5a65b', 'all_reduce': '#e8871e',
    'spmm': '#2e6fbd', 'gemm': '#6aa5e0', 'activation': '#9bc1ea',
    'loss': '#4c9a8a', 'adam': '#7b6fb0', 'other': '#b0b0b0',
}


class TimelineVisualizer:
    """Create visualizations of recorded runs."""

    def __init__(self, events: Optional[Sequence[Union[TimelineEvent, Dict]]] = None):
        """
        Initialize visualizer.

        Args:
            events: Timeline events of a run (optional for balance-only plots)
        """
        self.df = events_frame(events) if events else pd.DataFrame()
        plt.style.use('default')
        sns.set_palette("husl")

    def plot_timeline(self, workers: Optional[List[int]] = None, figsize: Tuple[int, int] = (15, 6),
                      stages: bool = True):
        """
        Gantt chart with one row per (worker, lane).

        Communication events are drawn in yellow tones, computation in blue.

        Args:
            workers: Subset of workers to draw (default: all)
            figsize: Figure size
            stages: Annotate SpMM/broadcast bars with their stage index
        """
        if self.df.empty:
            raise ValueError("No events to plot")
        df = self.df if workers is None else self.df[self.df['worker'].isin(workers)]
        t0 = df['t_start'].min()

        fig, ax = plt.subplots(figsize=figsize)
        rows = sorted({(w, l) for w, l in zip(df['worker'], df['lane'])})
        for y, (worker, lane) in enumerate(rows):
            lane_df = df[(df['worker'] == worker) & (df['lane'] == lane)]
            for kind, kdf in lane_df.groupby('kind'):
                spans = list(zip((kdf['t_start'] - t0) / 1000.0, kdf['duration_us'] / 1000.0))
                ax.broken_barh(spans, (y - 0.4, 0.8), facecolors=KIND_COLORS.get(kind, '#b0b0b0'),
                               edgecolor='black', linewidth=0.3, label=kind)
            if stages:
                for _, ev in lane_df[lane_df['stage'] >= 0].iterrows():
                    if ev['duration_us'] / 1000.0 > 0:
                        ax.text((ev['t_start'] - t0 + ev['duration_us'] / 2) / 1000.0, y,
                                str(ev['stage']), ha='center', va='center', fontsize=7)

        ax.set_yticks(range(len(rows)))
        ax.set_yticklabels([f"w{w} {'comm' if l == COMM_LANE else 'comp'}" for w, l in rows])
        ax.set_xlabel('Time (ms)', fontsize=10, fontweight='bold')
        ax.set_title('Execution Timeline', fontsize=12, fontweight='bold')
        handles, labels = ax.get_legend_handles_labels()
        unique = dict(zip(labels, handles))
        ax.legend(unique.values(), unique.keys(), loc='upper right', fontsize=8)
        ax.grid(True, axis='x', alpha=0.3)
        plt.tight_layout()

        return fig

    def plot_breakdown(self, reports: Union[BreakdownReport, Dict[str, BreakdownReport]],
                       figsize: Tuple[int, int] = (10, 6)):
        """
        Stacked bars of kernel fractions, one bar per report.

        Args:
            reports: A single report or a mapping label -> report
            figsize: Figure size
        """
        if isinstance(reports, BreakdownReport):
            reports = {'run': reports}
        frame = pd.DataFrame({label: r.fractions for label, r in reports.items()}).T[list(BUCKETS)]

        fig, ax = plt.subplots(figsize=figsize)
        bottom = np.zeros(len(frame))
        for bucket in BUCKETS:
            color = KIND_COLORS['broadcast'] if bucket == 'comm' else KIND_COLORS.get(bucket)
            ax.bar(frame.index, frame[bucket] * 100, bottom=bottom, label=bucket, color=color,
                   edgecolor='black', linewidth=0.5)
            bottom += frame[bucket].to_numpy() * 100
        ax.set_ylabel('Share of step time (%)', fontweight='bold')
        ax.set_title('Runtime Breakdown', fontsize=12, fontweight='bold')
        ax.legend(loc='upper left', bbox_to_anchor=(1.0, 1.0))
        plt.tight_layout()

        return fig

    def plot_tile_heatmap(self, report: BalanceReport, figsize: Tuple[int, int] = (8, 7),
                          title: str = 'Nonzeros per Tile'):
        """
        Heatmap of nnz per tile (rows: worker, columns: stage).

        Args:
            report: Balance report of a tile plan
            figsize: Figure size
            title: Plot title
        """
        fig, ax = plt.subplots(figsize=figsize)
        annotate = report.P <= 8
        sns.heatmap(report.per_tile_nnz, annot=annotate, fmt='d', cmap='YlOrRd',
                    linewidths=0.5, cbar_kws={"shrink": 0.8}, ax=ax)
        ax.set_xlabel('Stage (column part)', fontweight='bold')
        ax.set_ylabel('Worker (row part)', fontweight='bold')
        ax.set_title(f'{title} (overall ratio {report.overall_ratio:.2f})',
                     fontsize=12, fontweight='bold')
        plt.tight_layout()

        return fig

    def plot_stage_balance(self, reports: Dict[str, BalanceReport], figsize: Tuple[int, int] = (12, 5)):
        """Per-stage max/mean nnz ratio for several orderings."""
        fig, ax = plt.subplots(figsize=figsize)
        for label, report in reports.items():
            ax.plot(range(report.P), report.stage_ratio, marker='o', label=label)
        ax.axhline(1.0, color='gray', linestyle='--', linewidth=1)
        ax.set_xlabel('Stage', fontweight='bold')
        ax.set_ylabel('max / mean nnz', fontweight='bold')
        ax.set_title('Stage Load Balance', fontsize=12, fontweight='bold')
        ax.legend()
        ax.grid(True, alpha=0.3)
        plt.tight_layout()

        return fig

    def plot_density_study(self, study: pd.DataFrame, figsize: Tuple[int, int] = (10, 6)):
        """
        Speedup versus average degree, one line per worker count.

        Args:
            study: Output of TrainingDriver.density_study
            figsize: Figure size
        """
        fig, ax = plt.subplots(figsize=figsize)
        labelled = study.assign(workers=study['workers'].map(lambda p: f'P={p}'))
        sns.lineplot(data=labelled, x='degree', y='speedup', hue='workers', marker='o',
                     palette='husl', ax=ax)
        ax.set_xscale('log', base=2)
        ax.set_xlabel('Average degree', fontweight='bold')
        ax.set_ylabel('Speedup', fontweight='bold')
        ax.set_title('Speedup vs Graph Density', fontsize=12, fontweight='bold')
        ax.grid(True, alpha=0.3)
        plt.tight_layout()

        return fig
