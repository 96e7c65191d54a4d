"""
Unit tests for visualization module.
"""

import pytest
import numpy as np
import pandas as pd
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
from pathlib import Path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.collectives import TimelineEvent
from src.data_profiler import runtime_breakdown
from src.partitioner import balance_stats, random_permutation, apply_permutation, tile_rows, uniform_partition
from src.synth_graph import synth_graph
from src.visualization import TimelineVisualizer


class TestTimelineVisualizer:
    """Test suite for TimelineVisualizer class."""

    def setup_method(self):
        """Setup test fixtures."""
        np.random.seed(42)
        self.events = []
        for w in range(2):
            for j in range(2):
                self.events.append(TimelineEvent(w, 1, j, 'broadcast', 20.0 * j, 20.0 * j + 15))
                self.events.append(TimelineEvent(w, 0, j, 'spmm', 20.0 * j + 15, 20.0 * j + 35))
            self.events.append(TimelineEvent(w, 0, -1, 'gemm', 60.0, 70.0))
        self.viz = TimelineVisualizer(self.events)
        ds = synth_graph(400, 6, 0.5, seed=1, feature_dim=1, num_classes=2)
        p = uniform_partition(400, 4)
        self.original = balance_stats(tile_rows(ds.graph, p))
        shuffled, _, _ = apply_permutation(ds.graph, None, None, random_permutation(400, seed=1))
        self.shuffled = balance_stats(tile_rows(shuffled, p))

    def teardown_method(self):
        plt.close('all')

    def test_plot_timeline(self):
        """Test one bar row per worker and lane."""
        fig = self.viz.plot_timeline()
        ax = fig.axes[0]
        assert len(ax.get_yticks()) == 4
        assert ax.get_title() == 'Execution Timeline'

    def test_plot_timeline_subset(self):
        """Test restricting the chart to some workers."""
        fig = self.viz.plot_timeline(workers=[1], stages=False)
        assert len(fig.axes[0].get_yticks()) == 2

    def test_plot_timeline_empty(self):
        """Test an empty visualizer refuses to draw a timeline."""
        with pytest.raises(ValueError):
            TimelineVisualizer().plot_timeline()

    def test_plot_breakdown(self):
        """Test single and grouped breakdown bars."""
        report = runtime_breakdown(self.events)
        assert self.viz.plot_breakdown(report) is not None
        fig = self.viz.plot_breakdown({'a': report, 'b': report})
        assert fig.axes[0].get_ylabel() == 'Share of step time (%)'

    def test_plot_tile_heatmap(self):
        """Test the nnz heatmap."""
        fig = TimelineVisualizer().plot_tile_heatmap(self.original)
        assert 'overall ratio' in fig.axes[0].get_title()

    def test_plot_stage_balance(self):
        """Test one line per ordering."""
        fig = TimelineVisualizer().plot_stage_balance({'original': self.original,
                                                       'shuffled': self.shuffled})
        assert len(fig.axes[0].get_lines()) == 3

    def test_plot_density_study(self):
        """Test speedup lines from a study table."""
        study = pd.DataFrame({'degree': [4, 8, 4, 8], 'workers': [1, 1, 2, 2],
                              'epoch_us': [10.0, 20.0, 6.0, 11.0], 'spmm_fraction': [0.5] * 4,
                              'speedup': [1.0, 1.0, 10 / 6, 20 / 11]})
        fig = TimelineVisualizer().plot_density_study(study)
        assert fig.axes[0].get_xscale() == 'log'


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
