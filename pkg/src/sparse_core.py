"""
CSR sparse matrices and the SpMM kernel.

This module provides the CsrMatrix class (compressed sparse row storage for
the adjacency matrix A, its normalised forms Â and Â^T, and the tiles A^{ij}
of a partition) plus the operations the training engine needs on it:
construction from edges, in-degree normalisation, transpose and SpMM.

The arithmetic is delegated to scipy.sparse; CsrMatrix owns the arrays and
enforces the invariants (sorted, duplicate-free rows) that the rest of the
engine relies on.

Typical usage example:
    a = from_coo([CooEdge(0, 1), CooEdge(1, 0)], n=2)
    a_hat = normalize_in_degree(a)
    a_hat_t = transpose(a_hat)
    spmm(a_hat_t, hw, out=ahw)

Author: MGGCN maintainers
Date: October 2026
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import _sparsetools

from .dense_core import DenseMatrix, ShapeError, resolve_dtype


class AliasError(ValueError):
    """Raised when an SpMM output shares memory with its dense input."""


@dataclass(frozen=True)
class CooEdge:
    """Edge src -> dst with a weight (stored as entry (src, dst))."""
    src: int
    dst: int
    weight: float = 1.0


class CsrMatrix:
    """
    Compressed sparse row matrix with sorted, duplicate-free rows.

    Instances are treated as immutable once built and may be shared read-only
    by every worker.

    Attributes:
        rows (int): Number of rows
        cols (int): Number of columns
        row_ptr (np.ndarray): int64 array of length rows + 1
        col_idx (np.ndarray): int64 array of length nnz
        values (np.ndarray): float array of length nnz
    """

    def __init__(self, rows: int, cols: int, row_ptr: np.ndarray,
                 col_idx: np.ndarray, values: np.ndarray, check: bool = True):
        self.rows = int(rows)
        self.cols = int(cols)
        self.row_ptr = np.ascontiguousarray(row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(values)
        self._scipy: Optional[sp.csr_matrix] = None
        if check:
            self.validate()

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def validate(self) -> None:
        """
        Check the CSR invariants.

        Raises:
            ValueError: If row_ptr, col_idx or values are inconsistent
        """
        rp, ci = self.row_ptr, self.col_idx
        if rp.size != self.rows + 1:
            raise ValueError(f"row_ptr has {rp.size} entries, expected {self.rows + 1}")
        if rp[0] != 0 or rp[-1] != ci.size:
            raise ValueError(f"row_ptr must start at 0 and end at nnz={ci.size}")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr is not nondecreasing")
        if self.values.size != ci.size:
            raise ValueError(f"{self.values.size} values for {ci.size} column indices")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.cols:
                raise ValueError(f"Column index outside [0, {self.cols})")
            # strictly increasing within a row: a non-increase is only allowed at row starts
            steps = np.diff(ci) > 0
            row_starts = np.zeros(ci.size, dtype=bool)
            starts = rp[1:-1][rp[1:-1] < ci.size]
            row_starts[starts] = True
            if not np.all(steps | row_starts[1:]):
                raise ValueError("Column indices not strictly increasing within a row")

    @classmethod
    def from_scipy(cls, m: sp.spmatrix, dtype=None) -> 'CsrMatrix':
        """Canonicalise any scipy sparse matrix into a CsrMatrix."""
        csr = sp.csr_matrix(m, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        values = csr.data if dtype is None else csr.data.astype(resolve_dtype(dtype))
        out = cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, values, check=False)
        return out

    @classmethod
    def from_arrays(cls, src: np.ndarray, dst: np.ndarray, n: int,
                    weights: Optional[np.ndarray] = None, dtype='f64',
                    n_cols: Optional[int] = None) -> 'CsrMatrix':
        """
        Build from parallel endpoint arrays; duplicate (src, dst) weights are summed.

        Raises:
            ValueError: If an endpoint is outside [0, n)
        """
        n_cols = n if n_cols is None else n_cols
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if src.size and (src.min() < 0 or src.max() >= n):
            raise ValueError(f"Edge source outside [0, {n}): {src[(src < 0) | (src >= n)][0]}")
        if dst.size and (dst.min() < 0 or dst.max() >= n_cols):
            raise ValueError(f"Edge target outside [0, {n_cols}): "
                             f"{dst[(dst < 0) | (dst >= n_cols)][0]}")
        if weights is None:
            weights = np.ones(src.size)
        coo = sp.coo_matrix((np.asarray(weights, dtype=resolve_dtype(dtype)), (src, dst)),
                            shape=(n, n_cols))
        return cls.from_scipy(coo)

    @classmethod
    def identity(cls, n: int, dtype='f64') -> 'CsrMatrix':
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.ones(n, dtype=resolve_dtype(dtype)))

    def to_scipy(self) -> sp.csr_matrix:
        """scipy view sharing this matrix's arrays (cached)."""
        if self._scipy is None:
            self._scipy = sp.csr_matrix((self.values, self.col_idx, self.row_ptr),
                                        shape=self.shape, copy=False)
        return self._scipy

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def astype(self, dtype) -> 'CsrMatrix':
        return CsrMatrix(self.rows, self.cols, self.row_ptr, self.col_idx,
                         self.values.astype(resolve_dtype(dtype)), check=False)

    def row_block(self, start: int, stop: int) -> 'CsrMatrix':
        """Rows [start, stop) with global column indices."""
        p0, p1 = self.row_ptr[start], self.row_ptr[stop]
        return CsrMatrix(stop - start, self.cols, self.row_ptr[start:stop + 1] - p0,
                         self.col_idx[p0:p1], self.values[p0:p1], check=False)

    def in_degrees(self) -> np.ndarray:
        """Number of stored entries per column."""
        return np.bincount(self.col_idx, minlength=self.cols)

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def __repr__(self) -> str:
        return f"CsrMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def from_coo(edges: Iterable[CooEdge], n: int, dtype='f64') -> CsrMatrix:
    """
    Build a CSR adjacency matrix from an edge list.

    Entry (u, v) represents edge u -> v and is stored in row u. Duplicate
    edges are merged by summing their weights.

    Args:
        edges: CooEdge records
        n: Number of vertices
        dtype: Scalar type of the values

    Returns:
        n x n CsrMatrix

    Raises:
        ValueError: If an endpoint is outside [0, n)

    Example:
        >>> a = from_coo([CooEdge(0, 1), CooEdge(1, 0)], n=2)
        >>> a.row_ptr.tolist(), a.col_idx.tolist()
        ([0, 1, 2], [1, 0])
    """
    edges = list(edges)
    src = np.fromiter((e.src for e in edges), dtype=np.int64, count=len(edges))
    dst = np.fromiter((e.dst for e in edges), dtype=np.int64, count=len(edges))
    weights = np.fromiter((e.weight for e in edges), dtype=np.float64, count=len(edges))
    return CsrMatrix.from_arrays(src, dst, n, weights, dtype=dtype)


def normalize_in_degree(a: CsrMatrix) -> CsrMatrix:
    """
    Column-normalise by weighted in-degree: Â(u,v) = A(u,v) / Σ_w A(w,v).

    Columns whose in-degree sum is zero are left all-zero.

    Raises:
        ShapeError: If a is not square
    """
    if a.rows != a.cols:
        raise ShapeError(f"Adjacency must be square, got {a.shape}")
    col_sum = np.bincount(a.col_idx, weights=a.values, minlength=a.cols)
    denom = col_sum[a.col_idx]
    values = np.zeros_like(a.values)
    np.divide(a.values, denom, out=values, where=denom != 0)
    return CsrMatrix(a.rows, a.cols, a.row_ptr.copy(), a.col_idx.copy(),
                     values.astype(a.dtype, copy=False), check=False)


def transpose(a: CsrMatrix) -> CsrMatrix:
    """CSR of a^T with sorted rows."""
    return CsrMatrix.from_scipy(a.to_scipy().transpose().tocsr())


def add_self_loops(a: CsrMatrix, weight: float = 1.0) -> CsrMatrix:
    """Return a + weight * I (existing diagonal entries are incremented)."""
    if a.rows != a.cols:
        raise ShapeError(f"Adjacency must be square, got {a.shape}")
    eye = sp.identity(a.rows, dtype=a.dtype, format='csr') * weight
    return CsrMatrix.from_scipy(a.to_scipy() + eye)


def spmm(a: CsrMatrix, h: DenseMatrix, out: DenseMatrix,
         accumulate: bool = False, num_threads: int = 1) -> DenseMatrix:
    """
    Sparse x dense product: out = (accumulate ? out : 0) + a · h.

    Output rows are independent, so with num_threads > 1 the rows of `a` are
    split into contiguous chunks computed concurrently into disjoint slices of
    out.

    Args:
        a: Sparse left operand
        h: Dense right operand, a.cols rows
        out: Result, shape (a.rows, h.cols); must not share memory with h
        accumulate: Add into out instead of overwriting
        num_threads: Row-chunk parallelism inside this worker

    Returns:
        out

    Raises:
        ShapeError: On dimension mismatch
        AliasError: If out and h overlap
    """
    if a.cols != h.rows:
        raise ShapeError(f"spmm: a is {a.shape} but h is {h.shape}")
    if out.shape != (a.rows, h.cols):
        raise ShapeError(f"spmm output is {out.shape}, expected {(a.rows, h.cols)}")
    if np.shares_memory(out.data, h.data):
        raise AliasError("spmm output aliases its dense input")
    if a.rows == 0:
        return out

    dense = h.array
    if num_threads <= 1 or a.rows < 2 * num_threads:
        _spmm_rows(a, dense, out.array, 0, a.rows, accumulate)
        return out

    bounds = np.linspace(0, a.rows, num_threads + 1).astype(np.int64)
    with ThreadPoolExecutor(max_workers=num_threads) as pool:
        futures = [pool.submit(_spmm_rows, a, dense, out.array, int(lo), int(hi), accumulate)
                   for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        for f in futures:
            f.result()
    return out


def _spmm_rows(a: CsrMatrix, dense: np.ndarray, out: np.ndarray,
               start: int, stop: int, accumulate: bool) -> None:
    target = out[start:stop]
    if not accumulate:
        target.fill(0)
    if a.values.dtype != dense.dtype or dense.dtype != out.dtype:
        # mixed precision goes through scipy and pays for one temporary
        target += a.row_block(start, stop).to_scipy() @ dense
        return
    # Y += A·X straight into the output rows; row_ptr keeps absolute offsets
    _sparsetools.csr_matvecs(stop - start, a.cols, dense.shape[1],
                             a.row_ptr[start:stop + 1], a.col_idx, a.values,
                             dense.reshape(-1), target.reshape(-1))
