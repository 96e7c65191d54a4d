"""
Unit tests for synth_graph module.
"""

import pytest
import numpy as np
from pathlib import Path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.synth_graph import DEGREE_TOLERANCE, power_law_degrees, synth_community, synth_graph


class TestSynthGraph:
    """Test suite for the power-law generator."""

    @pytest.mark.parametrize("n,k,exponent", [(1000, 8, 0.5), (5000, 32, 0.5), (2000, 4, 0.0)])
    def test_average_degree(self, n, k, exponent):
        """Test nnz / n lands within tolerance of the target."""
        ds = synth_graph(n, k, exponent, seed=1)
        assert abs(ds.graph.nnz / ds.n - k) <= DEGREE_TOLERANCE * k

    def test_structure(self):
        """Test symmetry, unit weights and no self loops."""
        ds = synth_graph(500, 6, 0.5, seed=2)
        dense = ds.graph.to_dense()
        np.testing.assert_array_equal(dense, dense.T)
        assert not np.diag(dense).any()
        assert set(np.unique(ds.graph.values)) == {1.0}

    def test_seeded(self):
        """Test the same seed reproduces the dataset."""
        a = synth_graph(300, 5, 0.6, seed=4)
        b = synth_graph(300, 5, 0.6, seed=4)
        c = synth_graph(300, 5, 0.6, seed=5)
        np.testing.assert_array_equal(a.graph.col_idx, b.graph.col_idx)
        np.testing.assert_array_equal(a.features.array, b.features.array)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert not np.array_equal(a.features.array, c.features.array)

    def test_heavy_tail(self):
        """Test a hub of degree at least n / 20 appears."""
        ds = synth_graph(10_000, 16, 0.5, seed=5, feature_dim=1)
        assert ds.graph.out_degrees().max() >= 500

    def test_features_and_labels(self):
        """Test widths, classes and scalar type."""
        ds = synth_graph(200, 4, 0.5, seed=3, feature_dim=7, num_classes=5, dtype='f32')
        assert ds.features.shape == (200, 7)
        assert ds.features.dtype == np.float32
        assert ds.graph.dtype == np.float32
        assert ds.labels.min() >= 0 and ds.labels.max() < 5

    def test_invalid(self):
        """Test infeasible parameters."""
        with pytest.raises(ValueError):
            synth_graph(1, 1, 0.5, seed=0)
        with pytest.raises(ValueError):
            synth_graph(100, 0.5, 0.5, seed=0)
        with pytest.raises(ValueError):
            synth_graph(10, 10, 0.5, seed=0)
        with pytest.raises(ValueError):
            synth_graph(100, 4, -1.0, seed=0)

    def test_power_law_degrees(self):
        """Test the degree sequence mean and clipping."""
        rng = np.random.default_rng(42)
        degrees = power_law_degrees(1000, 10, 0.8, rng)
        assert degrees.min() >= 1
        assert degrees.max() <= 999
        assert degrees.mean() == pytest.approx(10, rel=0.1)
        assert degrees[0] > degrees[-1]


class TestSynthCommunity:
    """Test suite for the community generator."""

    def test_homophily(self):
        """Test most edges connect vertices of the same class."""
        ds = synth_community(600, num_classes=3, avg_degree=10, homophily=0.9, seed=1)
        coo = ds.graph.to_scipy().tocoo()
        same = (ds.labels[coo.row] == ds.labels[coo.col]).mean()
        assert same >= 0.85

    def test_features(self):
        """Test one-hot class columns plus noise padding."""
        ds = synth_community(400, num_classes=2, feature_noise=0.1, seed=2, feature_dim=5)
        assert ds.features.shape == (400, 5)
        picked = ds.features.array[np.arange(400), ds.labels]
        assert picked.mean() == pytest.approx(1.0, abs=0.05)
        assert np.bincount(ds.labels).tolist() == [200, 200]

    def test_symmetric(self):
        """Test the adjacency is symmetric without self loops."""
        dense = synth_community(100, seed=3).graph.to_dense()
        np.testing.assert_array_equal(dense, dense.T)
        assert not np.diag(dense).any()

    def test_invalid(self):
        """Test parameter validation."""
        with pytest.raises(ValueError):
            synth_community(3, num_classes=2)
        with pytest.raises(ValueError):
            synth_community(100, homophily=1.5)
        with pytest.raises(ValueError):
            synth_community(100, num_classes=3, feature_dim=2)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
