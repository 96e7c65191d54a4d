"""
Unit tests for sparse_core module.
"""

import pytest
import numpy as np
import scipy.sparse as sp
from pathlib import Path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.dense_core import AllocationAudit, DenseMatrix, ShapeError
from src.sparse_core import (AliasError, CooEdge, CsrMatrix, add_self_loops, from_coo,
                             normalize_in_degree, spmm, transpose)


def random_csr(n, density, seed, cols=None):
    m = sp.random(n, cols or n, density=density, format='csr', random_state=seed)
    return CsrMatrix.from_scipy(m)


class TestCsrMatrix:
    """Test suite for CSR construction."""

    def test_from_coo_example(self):
        """Test the two-vertex cycle."""
        a = from_coo([CooEdge(0, 1), CooEdge(1, 0)], n=2)
        assert a.row_ptr.tolist() == [0, 1, 2]
        assert a.col_idx.tolist() == [1, 0]
        assert a.values.tolist() == [1.0, 1.0]

    def test_duplicates_are_summed(self):
        """Test duplicate edges merge by summing weights."""
        a = from_coo([CooEdge(0, 1, 2.0), CooEdge(0, 1, 3.0), CooEdge(1, 1)], n=2)
        assert a.nnz == 2
        assert a.to_dense()[0, 1] == 5.0

    def test_out_of_range_edge(self):
        """Test endpoints outside [0, n) are rejected."""
        with pytest.raises(ValueError):
            from_coo([CooEdge(0, 3)], n=2)

    def test_rows_sorted(self):
        """Test column indices are strictly increasing within each row."""
        a = from_coo([CooEdge(0, 2), CooEdge(0, 0), CooEdge(0, 1)], n=3)
        assert a.col_idx.tolist() == [0, 1, 2]

    def test_validate_rejects_unsorted(self):
        """Test the invariant check on raw arrays."""
        with pytest.raises(ValueError):
            CsrMatrix(1, 3, np.array([0, 2]), np.array([2, 1]), np.ones(2))
        with pytest.raises(ValueError):
            CsrMatrix(2, 2, np.array([0, 1]), np.array([0]), np.ones(1))

    def test_identity(self):
        """Test the identity constructor."""
        np.testing.assert_array_equal(CsrMatrix.identity(4).to_dense(), np.eye(4))

    @pytest.mark.parametrize("seed", range(5))
    def test_from_coo_random_edges(self, seed):
        """Test 100 random weighted edges against a dense accumulation."""
        rng = np.random.default_rng(seed)
        n = 20
        src = rng.integers(0, n, size=100)
        dst = rng.integers(0, n, size=100)
        weights = rng.uniform(0.5, 2.0, size=100)
        a = from_coo([CooEdge(int(s), int(d), float(w)) for s, d, w in zip(src, dst, weights)], n=n)

        dense = np.zeros((n, n))
        np.add.at(dense, (src, dst), weights)
        np.testing.assert_allclose(a.to_dense(), dense, rtol=1e-14)
        assert a.nnz == np.count_nonzero(dense)
        assert a.row_ptr[0] == 0 and a.row_ptr[-1] == a.nnz
        assert np.all(np.diff(a.row_ptr) >= 0)
        for r in range(n):
            cols = a.col_idx[a.row_ptr[r]:a.row_ptr[r + 1]]
            assert np.all(np.diff(cols) > 0)
        a.validate()

        again = CsrMatrix.from_scipy(a.to_scipy())
        np.testing.assert_array_equal(again.row_ptr, a.row_ptr)
        np.testing.assert_array_equal(again.col_idx, a.col_idx)
        np.testing.assert_array_equal(again.values, a.values)
        np.testing.assert_array_equal(transpose(transpose(a)).to_dense(), a.to_dense())


class TestSparseOps:
    """Test suite for normalisation, transpose and SpMM."""

    def setup_method(self):
        """Setup test fixtures."""
        np.random.seed(42)
        self.a = random_csr(30, 0.2, seed=1)
        self.h = DenseMatrix.from_array(np.random.randn(30, 5))

    def test_normalize_in_degree(self):
        """Test nonempty columns sum to one and empty ones stay zero."""
        a = from_coo([CooEdge(0, 1), CooEdge(2, 1), CooEdge(1, 0)], n=3)
        a_hat = normalize_in_degree(a).to_dense()
        np.testing.assert_allclose(a_hat.sum(axis=0), [1.0, 1.0, 0.0])
        assert a_hat[0, 1] == 0.5

    def test_normalize_weighted(self):
        """Test weighted in-degrees."""
        dense = self.a.to_dense()
        col = dense.sum(axis=0)
        expected = np.divide(dense, col, out=np.zeros_like(dense), where=col != 0)
        np.testing.assert_allclose(normalize_in_degree(self.a).to_dense(), expected, rtol=1e-14)

    def test_transpose(self):
        """Test transpose against dense."""
        t = transpose(self.a)
        np.testing.assert_array_equal(t.to_dense(), self.a.to_dense().T)
        t.validate()

    def test_add_self_loops(self):
        """Test A + I."""
        looped = add_self_loops(self.a)
        np.testing.assert_allclose(looped.to_dense(), self.a.to_dense() + np.eye(30))

    def test_spmm_matches_dense(self):
        """Test SpMM against a dense product."""
        out = DenseMatrix.zeros(30, 5)
        spmm(self.a, self.h, out)
        np.testing.assert_allclose(out.array, self.a.to_dense() @ self.h.array, rtol=1e-12, atol=1e-14)

    def test_spmm_accumulate(self):
        """Test accumulation into the output."""
        out = DenseMatrix.from_array(np.ones((30, 5)))
        spmm(self.a, self.h, out, accumulate=True)
        np.testing.assert_allclose(out.array, 1.0 + self.a.to_dense() @ self.h.array, rtol=1e-12)

    def test_spmm_linearity(self):
        """Test A(2x - 3y) equals 2Ax - 3Ay."""
        y = DenseMatrix.from_array(np.random.randn(30, 5))
        combo = DenseMatrix.from_array(2.0 * self.h.array - 3.0 * y.array)
        ax, ay, a_combo = (DenseMatrix.zeros(30, 5) for _ in range(3))
        spmm(self.a, self.h, ax)
        spmm(self.a, y, ay)
        spmm(self.a, combo, a_combo)
        np.testing.assert_allclose(a_combo.array, 2.0 * ax.array - 3.0 * ay.array,
                                   rtol=1e-12, atol=1e-12)

    def test_spmm_permutation_matrix(self):
        """Test a permutation matrix reorders rows exactly."""
        perm = np.random.permutation(30)
        p = from_coo([CooEdge(i, int(perm[i])) for i in range(30)], n=30)
        out = DenseMatrix.zeros(30, 5)
        spmm(p, self.h, out)
        np.testing.assert_array_equal(out.array, self.h.array[perm])

    def test_spmm_writes_in_place(self):
        """Test a large SpMM allocates nothing the size of its output."""
        a = random_csr(4000, 0.002, seed=5)
        h = DenseMatrix.from_array(np.random.randn(4000, 64))
        out = DenseMatrix.zeros(4000, 64)
        spmm(a, h, out)
        with AllocationAudit(trace_memory=True) as audit:
            spmm(a, h, out)
            spmm(a, h, out, accumulate=True)
        assert audit.peak_bytes < out.nbytes // 8
        np.testing.assert_allclose(out.array, 2.0 * (a.to_scipy() @ h.array), rtol=1e-12, atol=1e-12)

    def test_spmm_float32(self):
        """Test single precision operands stay single precision."""
        a = CsrMatrix.from_scipy(self.a.to_scipy(), dtype='f32')
        h = DenseMatrix.from_array(self.h.array, dtype='f32')
        out = DenseMatrix.zeros(30, 5, 'f32')
        spmm(a, h, out)
        assert out.dtype == np.float32
        np.testing.assert_allclose(out.array, self.a.to_dense() @ self.h.array, rtol=1e-5, atol=1e-5)

    def test_spmm_threads(self):
        """Test row-chunk threading gives the same result."""
        serial = DenseMatrix.zeros(30, 5)
        threaded = DenseMatrix.zeros(30, 5)
        spmm(self.a, self.h, serial)
        spmm(self.a, self.h, threaded, num_threads=4)
        np.testing.assert_array_equal(serial.array, threaded.array)

    def test_spmm_rectangular(self):
        """Test a non-square tile."""
        tile = random_csr(7, 0.3, seed=2, cols=30)
        out = DenseMatrix.zeros(7, 5)
        spmm(tile, self.h, out)
        np.testing.assert_allclose(out.array, tile.to_dense() @ self.h.array, rtol=1e-12, atol=1e-14)

    def test_spmm_alias(self):
        """Test aliasing output and input is refused."""
        sq = DenseMatrix.from_array(np.random.randn(30, 30))
        with pytest.raises(AliasError):
            spmm(self.a, sq, sq)

    def test_spmm_shape(self):
        """Test dimension checks."""
        with pytest.raises(ShapeError):
            spmm(self.a, DenseMatrix.zeros(29, 5), DenseMatrix.zeros(30, 5))
        with pytest.raises(ShapeError):
            spmm(self.a, self.h, DenseMatrix.zeros(30, 4))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
