"""
Unit tests for partitioner module.
"""

import pytest
import numpy as np
import scipy.sparse as sp
from pathlib import Path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.dense_core import DenseMatrix, ShapeError
from src.partitioner import (PartitionVector, Permutation, apply_permutation, balance_stats,
                             degree_sorted_permutation, random_permutation, tile_rows,
                             uniform_partition)
from src.sparse_core import CooEdge, CsrMatrix, from_coo
from src.synth_graph import synth_graph


def star(n):
    edges = [CooEdge(0, v) for v in range(1, n)] + [CooEdge(v, 0) for v in range(1, n)]
    return from_coo(edges, n)


class TestPartitionVector:
    """Test suite for partition vectors."""

    def test_uniform_example(self):
        """Test floor(i * n / P) bounds."""
        assert uniform_partition(10, 4).bounds.tolist() == [0, 2, 5, 7, 10]

    def test_more_parts_than_rows(self):
        """Test P > n yields empty parts that still cover [0, n)."""
        p = uniform_partition(3, 5)
        assert p.P == 5
        assert p.n == 3
        assert p.sizes().sum() == 3
        assert (p.sizes() == 0).sum() == 2

    def test_zero_parts(self):
        """Test P == 0 is rejected."""
        with pytest.raises(ValueError):
            uniform_partition(10, 0)

    def test_invalid_bounds(self):
        """Test non-monotone vectors are rejected."""
        with pytest.raises(ValueError):
            PartitionVector(np.array([0, 5, 3, 10]))
        with pytest.raises(ValueError):
            PartitionVector(np.array([1, 5]))

    def test_owner_of(self):
        """Test vertex to part lookup."""
        p = uniform_partition(10, 4)
        assert p.owner_of(np.array([0, 1, 2, 4, 5, 9])).tolist() == [0, 0, 1, 1, 2, 3]


class TestPermutation:
    """Test suite for vertex permutations."""

    def test_random_is_permutation(self):
        """Test the shuffle yields a bijection with a consistent inverse."""
        perm = random_permutation(100, seed=7)
        assert sorted(perm.forward.tolist()) == list(range(100))
        np.testing.assert_array_equal(perm.inverse[perm.forward], np.arange(100))

    def test_random_is_seeded(self):
        """Test determinism and seed sensitivity."""
        a = random_permutation(50, seed=3)
        b = random_permutation(50, seed=3)
        c = random_permutation(50, seed=4)
        np.testing.assert_array_equal(a.forward, b.forward)
        assert not np.array_equal(a.forward, c.forward)

    def test_tiny_sizes(self):
        """Test n <= 1."""
        assert random_permutation(0, seed=1).n == 0
        assert random_permutation(1, seed=1).forward.tolist() == [0]

    def test_apply_permutation(self):
        """Test a'(pi(u), pi(v)) == a(u, v) and rows move with their vertices."""
        np.random.seed(42)
        a = CsrMatrix.from_scipy(sp.random(20, 20, density=0.2, format='csr', random_state=5))
        x = DenseMatrix.from_array(np.random.randn(20, 3))
        labels = np.arange(20)
        perm = random_permutation(20, seed=11)
        a2, x2, y2 = apply_permutation(a, x, labels, perm)

        dense, dense2 = a.to_dense(), a2.to_dense()
        f = perm.forward
        np.testing.assert_array_equal(dense2[np.ix_(f, f)], dense)
        np.testing.assert_array_equal(x2.array[f], x.array)
        np.testing.assert_array_equal(y2[f], labels)

    def test_apply_permutation_size_mismatch(self):
        """Test size checks."""
        with pytest.raises(ShapeError):
            apply_permutation(star(5), None, None, Permutation.identity(4))

    def test_inverted_round_trip(self):
        """Test applying a permutation and its inverse restores the graph."""
        a = star(9)
        perm = random_permutation(9, seed=2)
        a2, _, _ = apply_permutation(a, None, None, perm)
        a3, _, _ = apply_permutation(a2, None, None, perm.inverted())
        np.testing.assert_array_equal(a3.to_dense(), a.to_dense())


class TestTiling:
    """Test suite for tiling and balance statistics."""

    def setup_method(self):
        """Setup test fixtures."""
        self.a = CsrMatrix.from_scipy(sp.random(37, 37, density=0.15, format='csr', random_state=9))

    def test_tiles_reassemble(self):
        """Test tiles cover the matrix exactly once."""
        plan = tile_rows(self.a, uniform_partition(37, 5))
        assert plan.tile_nnz().sum() == self.a.nnz
        np.testing.assert_array_equal(plan.reassemble().to_dense(), self.a.to_dense())

    def test_tile_shapes(self):
        """Test tile (i, j) is part_size(i) x part_size(j)."""
        p = uniform_partition(37, 4)
        plan = tile_rows(self.a, p)
        for i in range(4):
            for j in range(4):
                assert plan.tiles[i][j].shape == (p.part_size(i), p.part_size(j))

    def test_partition_must_cover(self):
        """Test the partition size must match the matrix."""
        with pytest.raises(ValueError):
            tile_rows(self.a, uniform_partition(36, 4))

    def test_star_original_imbalance(self):
        """Test a star graph in original order concentrates nonzeros in part 0."""
        report = balance_stats(tile_rows(star(16), uniform_partition(16, 4)))
        assert report.per_tile_nnz.tolist() == [[6, 4, 4, 4], [4, 0, 0, 0], [4, 0, 0, 0], [4, 0, 0, 0]]
        assert report.stage_ratio[1] == pytest.approx(4.0)
        assert report.overall_ratio == pytest.approx(18 / 7.5)

    def test_balance_report_exports(self, tmp_path):
        """Test JSON and frame exports."""
        report = balance_stats(tile_rows(self.a, uniform_partition(37, 3)))
        text = report.to_json(str(tmp_path / 'balance.json'))
        assert '"overall_ratio"' in text
        frame = report.to_frame()
        assert list(frame.columns[-3:]) == ['max', 'mean', 'ratio']
        assert len(frame) == 3

    def test_permutation_balances_power_law(self):
        """Test random relabeling evens out nonzeros on a heavy-tailed graph."""
        ds = synth_graph(10_000, 16, exponent=0.5, seed=5, feature_dim=1, num_classes=2)
        assert ds.graph.out_degrees().max() >= ds.n / 20

        p = uniform_partition(ds.n, 8)
        sorted_a, _, _ = apply_permutation(ds.graph, None, None, degree_sorted_permutation(ds.graph))
        random_a, _, _ = apply_permutation(ds.graph, None, None, random_permutation(ds.n, seed=5))
        sorted_report = balance_stats(tile_rows(sorted_a, p))
        random_report = balance_stats(tile_rows(random_a, p))

        assert random_report.overall_ratio <= 1.3
        assert random_report.overall_ratio < sorted_report.overall_ratio


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
