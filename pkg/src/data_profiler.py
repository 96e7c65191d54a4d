"""
Runtime profiling of recorded training timelines.

This module turns the TimelineEvents of a run into reports: the per-kernel
runtime breakdown (SpMM, GeMM, activation, loss, Adam, communication), event
summary statistics, per-stage communication/computation tables, per-worker
load and straggler detection.

Communication time includes the wait inside a collective, so a worker that
reaches a broadcast early is charged for waiting on its peers.

Typical usage example:
    profiler = RunProfiler(group.timeline.events())
    report = profiler.runtime_breakdown()
    print(report.to_text())
    stages = profiler.stage_table()

Author: MGGCN maintainers
Date: October 2026
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from .collectives import COMM_KINDS, COMM_LANE, COMPUTE_LANE, TimelineEvent
from .dist_spmm import stage_records


BUCKETS = ('spmm', 'gemm', 'activation', 'loss', 'adam', 'comm')


class NoEventsError(ValueError):
    """The timeline holds no events to aggregate."""


def _bucket(kind: str) -> Optional[str]:
    if kind in COMM_KINDS:
        return 'comm'
    return kind if kind in BUCKETS else None


@dataclass
class BreakdownReport:
    """
    Total time per kernel bucket, in microseconds and as fractions.

    Attributes:
        totals_us (Dict[str, float]): Summed event durations per bucket
        fractions (Dict[str, float]): totals divided by their sum (sum to 1)
        workers (int): Number of workers the events came from
    """
    totals_us: Dict[str, float]
    fractions: Dict[str, float]
    workers: int = 1

    def to_dict(self) -> Dict:
        return {'workers': self.workers, 'totals_us': self.totals_us, 'fractions': self.fractions}

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'kernel': list(BUCKETS),
                             'total_us': [self.totals_us[b] for b in BUCKETS],
                             'fraction': [self.fractions[b] for b in BUCKETS]})

    def to_text(self) -> str:
        """Aligned table with a percentage column."""
        frame = self.to_frame()
        frame['percent'] = (frame['fraction'] * 100).round(2)
        frame['total_us'] = frame['total_us'].round(1)
        return frame[['kernel', 'total_us', 'percent']].to_string(index=False)


def events_frame(events: Sequence[Union[TimelineEvent, Dict]]) -> pd.DataFrame:
    """TimelineEvents (or their exported dicts) as a DataFrame with a duration column."""
    records = [e.to_dict() if isinstance(e, TimelineEvent) else dict(e) for e in events]
    frame = pd.DataFrame(records, columns=['worker', 'lane', 'stage', 'kind', 't_start', 't_end',
                                           'task_id', 'deps', 'label'])
    frame['duration_us'] = (frame['t_end'] - frame['t_start']).astype(float)
    return frame


def runtime_breakdown(events: Sequence[Union[TimelineEvent, Dict]]) -> BreakdownReport:
    """
    Aggregate lane-0 and lane-1 event durations by kernel bucket.

    Raises:
        NoEventsError: If there are no events (or none in a known bucket)
    """
    if len(events) == 0:
        raise NoEventsError("no events recorded")
    frame = events_frame(events)
    frame['bucket'] = frame['kind'].map(_bucket)
    frame = frame.dropna(subset=['bucket'])
    if frame.empty:
        raise NoEventsError("no events recorded")
    totals = frame.groupby('bucket')['duration_us'].sum().reindex(list(BUCKETS), fill_value=0.0)
    grand = float(totals.sum())
    if grand > 0:
        fractions = {b: float(totals[b] / grand) for b in BUCKETS}
    else:
        # all events instantaneous: share equally among the buckets present
        present = [b for b in BUCKETS if b in set(frame['bucket'])]
        fractions = {b: (1.0 / len(present) if b in present else 0.0) for b in BUCKETS}
    return BreakdownReport({b: float(totals[b]) for b in BUCKETS}, fractions,
                           workers=int(frame['worker'].nunique()))


class RunProfiler:
    """
    Profile the timeline of a training or benchmark run.

    Attributes:
        df (pd.DataFrame): One row per event with a duration_us column

    Example:
        >>> profiler = RunProfiler(events)
        >>> profiler.runtime_breakdown().fractions['spmm']
        0.83
    """

    def __init__(self, events: Sequence[Union[TimelineEvent, Dict]]):
        if len(events) == 0:
            raise NoEventsError("no events recorded")
        self.events = list(events)
        self.df = events_frame(self.events)

    def runtime_breakdown(self) -> BreakdownReport:
        return runtime_breakdown(self.events)

    def generate_summary_statistics(self) -> pd.DataFrame:
        """
        Duration statistics per event kind.

        Returns:
            DataFrame indexed by kind with count, mean, std, min, quartiles,
            max and total (all in microseconds)
        """
        summary = self.df.groupby('kind')['duration_us'].describe()
        summary['total'] = self.df.groupby('kind')['duration_us'].sum()
        return summary

    def stage_table(self) -> pd.DataFrame:
        """
        Per-stage communication and computation time of the staged SpMMs.

        Returns:
            DataFrame indexed by stage with mean comm_us, mean comp_us and the
            slowest worker's comp_us
        """
        timeline = [e if isinstance(e, TimelineEvent) else TimelineEvent(**e) for e in self.events]
        records = stage_records(timeline)
        if records.empty:
            return pd.DataFrame(columns=['comm_us', 'comp_us', 'max_comp_us'])
        table = records.groupby('stage').agg(comm_us=('comm_us', 'mean'),
                                             comp_us=('comp_us', 'mean'),
                                             max_comp_us=('comp_us', 'max'))
        return table

    def worker_load(self) -> pd.DataFrame:
        """Busy time per worker and lane, plus the span each worker was active."""
        busy = self.df.pivot_table(index='worker', columns='lane', values='duration_us',
                                   aggfunc='sum', fill_value=0.0)
        busy = busy.reindex(columns=[COMPUTE_LANE, COMM_LANE], fill_value=0.0)
        busy.columns = ['compute_us', 'comm_us']
        span = self.df.groupby('worker').agg(start=('t_start', 'min'), end=('t_end', 'max'))
        busy['span_us'] = span['end'] - span['start']
        busy['compute_share'] = np.where(busy['span_us'] > 0, busy['compute_us'] / busy['span_us'], 0.0)
        return busy

    def detect_stragglers(self, threshold: float = 2.0) -> List[int]:
        """
        Workers whose compute time is an outlier by Z-score.

        Args:
            threshold: Z-score above which a worker counts as a straggler

        Returns:
            Worker ids, slowest first
        """
        load = self.worker_load()['compute_us']
        if len(load) < 3 or load.std() == 0:
            return []
        z = stats.zscore(load.to_numpy())
        slow = load.index[z > threshold]
        return sorted(slow.tolist(), key=lambda w: -load[w])

    def wall_span_us(self) -> float:
        return float(self.df['t_end'].max() - self.df['t_start'].min())

    def overlap_ratio(self) -> float:
        """
        Fraction of communication time hidden behind computation, averaged over workers.

        For each worker, the communication intervals are intersected with the
        union of its compute intervals.
        """
        ratios = []
        for _, wdf in self.df.groupby('worker'):
            comm = wdf[wdf['lane'] == COMM_LANE][['t_start', 't_end']].to_numpy()
            comp = wdf[wdf['lane'] == COMPUTE_LANE][['t_start', 't_end']].to_numpy()
            total = float((comm[:, 1] - comm[:, 0]).sum()) if len(comm) else 0.0
            if total <= 0:
                continue
            hidden = 0.0
            for s, e in comm:
                inter = np.clip(np.minimum(comp[:, 1], e) - np.maximum(comp[:, 0], s), 0, None)
                hidden += float(inter.sum())
            ratios.append(hidden / total)
        return float(np.mean(ratios)) if ratios else 0.0
