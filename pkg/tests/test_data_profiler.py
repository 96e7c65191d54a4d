"""
Unit tests for data_profiler module.
"""

import json
import pytest
import numpy as np
from pathlib import Path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.collectives import TimelineEvent
from src.data_profiler import BUCKETS, NoEventsError, RunProfiler, runtime_breakdown


def worker_events(worker, spmm_us=60.0):
    """One worker's epoch: two SpMM stages with overlapped broadcasts, then GeMM and Adam."""
    return [
        TimelineEvent(worker, 1, 0, 'broadcast', 0.0, 20.0),
        TimelineEvent(worker, 0, 0, 'spmm', 0.0, spmm_us),
        TimelineEvent(worker, 1, 1, 'broadcast', 20.0, 40.0),
        TimelineEvent(worker, 0, 1, 'spmm', spmm_us, spmm_us + 20.0),
        TimelineEvent(worker, 0, -1, 'gemm', spmm_us + 20.0, spmm_us + 30.0),
        TimelineEvent(worker, 0, -1, 'adam', spmm_us + 30.0, spmm_us + 40.0),
        TimelineEvent(worker, 1, -1, 'all_reduce', spmm_us + 35.0, spmm_us + 45.0),
    ]


class TestRuntimeBreakdown:
    """Test suite for the kernel breakdown."""

    def setup_method(self):
        """Setup test fixtures."""
        self.events = worker_events(0)

    def test_totals_and_fractions(self):
        """Test durations are summed per bucket and fractions sum to one."""
        report = runtime_breakdown(self.events)
        assert report.totals_us['spmm'] == pytest.approx(80.0)
        assert report.totals_us['comm'] == pytest.approx(50.0)
        assert report.totals_us['loss'] == 0.0
        assert sum(report.fractions.values()) == pytest.approx(1.0)
        assert report.fractions['spmm'] == pytest.approx(80.0 / 150.0)
        assert report.workers == 1

    def test_other_kind_ignored(self):
        """Test events outside the buckets do not count."""
        report = runtime_breakdown(self.events + [TimelineEvent(0, 0, -1, 'other', 0.0, 1000.0)])
        assert report.fractions['spmm'] == pytest.approx(80.0 / 150.0)

    def test_empty(self):
        """Test an empty timeline is an error."""
        with pytest.raises(NoEventsError, match='no events recorded'):
            runtime_breakdown([])
        with pytest.raises(NoEventsError):
            RunProfiler([])

    def test_exports(self, tmp_path):
        """Test JSON, frame and text exports."""
        report = runtime_breakdown(self.events)
        path = tmp_path / 'breakdown.json'
        report.to_json(path)
        loaded = json.loads(path.read_text())
        assert set(loaded['fractions']) == set(BUCKETS)
        assert list(report.to_frame()['kernel']) == list(BUCKETS)
        assert 'spmm' in report.to_text()

    def test_accepts_dicts(self):
        """Test exported dicts aggregate like events."""
        report = runtime_breakdown([e.to_dict() for e in self.events])
        assert report.totals_us['gemm'] == pytest.approx(10.0)


class TestRunProfiler:
    """Test suite for RunProfiler class."""

    def setup_method(self):
        """Setup test fixtures."""
        np.random.seed(42)
        self.events = [e for w in range(8) for e in worker_events(w, 600.0 if w == 7 else 60.0)]
        self.profiler = RunProfiler(self.events)

    def test_summary_statistics(self):
        """Test per-kind duration statistics."""
        summary = self.profiler.generate_summary_statistics()
        assert 'spmm' in summary.index
        assert 'mean' in summary.columns
        assert summary.loc['gemm', 'total'] == pytest.approx(80.0)

    def test_stage_table(self):
        """Test per-stage means and slowest worker."""
        table = self.profiler.stage_table()
        assert list(table.index) == [0, 1]
        assert table.loc[0, 'comm_us'] == pytest.approx(20.0)
        assert table.loc[0, 'max_comp_us'] == pytest.approx(600.0)

    def test_stage_table_from_dicts(self):
        """Test stage tables from an exported timeline."""
        table = RunProfiler([e.to_dict() for e in worker_events(0)]).stage_table()
        assert table.loc[1, 'comp_us'] == pytest.approx(20.0)

    def test_worker_load(self):
        """Test busy time per lane and active span."""
        load = self.profiler.worker_load()
        assert load.loc[0, 'compute_us'] == pytest.approx(100.0)
        assert load.loc[0, 'comm_us'] == pytest.approx(50.0)
        assert load.loc[0, 'span_us'] == pytest.approx(105.0)

    def test_detect_stragglers(self):
        """Test the slow worker is flagged."""
        assert self.profiler.detect_stragglers() == [7]
        assert RunProfiler(worker_events(0) + worker_events(1)).detect_stragglers() == []

    def test_overlap_ratio(self):
        """Test hidden communication share."""
        profiler = RunProfiler(worker_events(0))
        assert profiler.overlap_ratio() == pytest.approx(45.0 / 50.0)
        assert profiler.wall_span_us() == pytest.approx(105.0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
