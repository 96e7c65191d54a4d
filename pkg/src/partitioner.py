"""
Partition vectors, row tiling, random vertex permutation and balance statistics.

A partition vector p with P parts splits the vertex range [0, n) into
contiguous blocks; worker i owns rows p(i)..p(i+1) of the adjacency matrix and
of every dense matrix. Tiling the matrix with p on both dimensions yields the
P x P grid of tiles A^{ij} consumed stage by stage by the distributed SpMM.
Random symmetric relabeling of the vertices evens out the nonzeros per tile.

Typical usage example:
    p = uniform_partition(a.rows, 4)
    perm = random_permutation(a.rows, seed=7)
    a_perm, x_perm, y_perm = apply_permutation(a, x, labels, perm)
    plan = tile_rows(a_perm, p)
    report = balance_stats(plan)
    print(report.overall_ratio)
"""

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .dense_core import DenseMatrix, ShapeError
from .sparse_core import CsrMatrix


@dataclass(frozen=True)
class PartitionVector:
    """
    Monotone boundary vector: bounds[0] == 0 <= ... <= bounds[P] == n.

    Attributes:
        bounds (np.ndarray): P + 1 vertex offsets
    """
    bounds: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=np.int64)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("A partition vector needs at least two bounds")
        if b[0] != 0 or np.any(np.diff(b) < 0):
            raise ValueError(f"Partition bounds must start at 0 and be nondecreasing: {b.tolist()}")
        object.__setattr__(self, 'bounds', b)

    @property
    def P(self) -> int:
        return int(self.bounds.size - 1)

    @property
    def n(self) -> int:
        return int(self.bounds[-1])

    def part_range(self, i: int) -> Tuple[int, int]:
        return int(self.bounds[i]), int(self.bounds[i + 1])

    def part_size(self, i: int) -> int:
        return int(self.bounds[i + 1] - self.bounds[i])

    def sizes(self) -> np.ndarray:
        return np.diff(self.bounds)

    @property
    def max_part(self) -> int:
        return int(self.sizes().max())

    def owner_of(self, v) -> np.ndarray:
        """Part index owning each vertex id."""
        return np.searchsorted(self.bounds, v, side='right') - 1


@dataclass(frozen=True)
class Permutation:
    """
    Vertex relabeling: forward[old] = new, inverse[new] = old.
    """
    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward: np.ndarray) -> 'Permutation':
        forward = np.asarray(forward, dtype=np.int64)
        inverse = np.empty_like(forward)
        inverse[forward] = np.arange(forward.size)
        return cls(forward, inverse)

    @classmethod
    def identity(cls, n: int) -> 'Permutation':
        return cls(np.arange(n), np.arange(n))

    @property
    def n(self) -> int:
        return int(self.forward.size)

    def inverted(self) -> 'Permutation':
        return Permutation(self.inverse, self.forward)

    def permute_rows(self, values: np.ndarray) -> np.ndarray:
        """values'[forward[u]] = values[u] along the first axis."""
        values = np.asarray(values)
        out = np.empty_like(values)
        out[self.forward] = values
        return out


@dataclass
class TilePlan:
    """
    P x P grid of locally indexed tiles: tiles[i][j] = A^{ij}.

    Tile (i, j) covers rows p(i)..p(i+1) and columns p(j)..p(j+1) of A, with
    both indices shifted to start at zero so each tile is a standalone CSR.
    """
    p: PartitionVector
    tiles: List[List[CsrMatrix]]
    nnz_total: int = 0

    @property
    def P(self) -> int:
        return self.p.P

    def tile_nnz(self) -> np.ndarray:
        return np.array([[t.nnz for t in row] for row in self.tiles], dtype=np.int64)

    def reassemble(self) -> CsrMatrix:
        """Rebuild the full matrix from its tiles."""
        blocks = [[t.to_scipy() for t in row] for row in self.tiles]
        return CsrMatrix.from_scipy(sp.bmat(blocks, format='csr'))


@dataclass
class BalanceReport:
    """
    Nonzero balance of a TilePlan.

    stage_ratio[j] is max_i nnz(i, j) / mean_i nnz(i, j): how long stage j's
    slowest worker computes relative to a perfectly balanced stage.
    overall_ratio is Σ_j max_i nnz(i, j) / Σ_j mean_i nnz(i, j).
    """
    P: int
    per_tile_nnz: np.ndarray
    stage_ratio: np.ndarray
    overall_ratio: float
    extras: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'P': self.P,
            'per_tile_nnz': self.per_tile_nnz.tolist(),
            'stage_ratio': [float(r) for r in self.stage_ratio],
            'overall_ratio': float(self.overall_ratio),
        }

    def to_json(self, path: Optional[str] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, 'w') as fh:
                fh.write(text)
        return text

    def to_frame(self) -> pd.DataFrame:
        """One row per stage: nnz per worker, max, mean and ratio."""
        frame = pd.DataFrame(self.per_tile_nnz.T,
                             columns=[f'worker_{i}' for i in range(self.P)])
        frame.index.name = 'stage'
        frame['max'] = frame.max(axis=1)
        frame['mean'] = self.per_tile_nnz.mean(axis=0)
        frame['ratio'] = self.stage_ratio
        return frame


def uniform_partition(n: int, P: int) -> PartitionVector:
    """
    Split [0, n) into P contiguous parts with bounds[i] = floor(i * n / P).

    Parts differ in size by at most one; with P > n some parts are empty.

    Raises:
        ValueError: If P is zero

    Example:
        >>> uniform_partition(10, 4).bounds.tolist()
        [0, 2, 5, 7, 10]
    """
    if P < 1:
        raise ValueError("Number of parts must be at least 1")
    i = np.arange(P + 1, dtype=np.int64)
    return PartitionVector((i * n) // P)


def random_permutation(n: int, seed: int) -> Permutation:
    """
    Seeded Fisher-Yates shuffle of [0, n).

    The PRNG is numpy's PCG64 read through its raw 64-bit output (stable
    across platforms); each draw keeps the top 53 bits as a uniform in
    [0, 1) and picks j = floor(u * (i + 1)).

    Args:
        n: Number of vertices
        seed: PRNG seed

    Returns:
        Permutation with forward[old] = new
    """
    forward = np.arange(n, dtype=np.int64)
    if n <= 1:
        return Permutation(forward, forward.copy())
    raw = np.random.PCG64(seed).random_raw(n - 1)
    uniforms = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    spans = np.arange(n, 1, -1, dtype=np.float64)
    picks = (uniforms * spans).astype(np.int64)
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = picks[k]
        forward[i], forward[j] = forward[j], forward[i]
    return Permutation.from_forward(forward)


def degree_sorted_permutation(a: CsrMatrix) -> Permutation:
    """Relabel vertices by decreasing total degree (worst case for balance)."""
    degree = a.out_degrees() + a.in_degrees()
    order = np.argsort(-degree, kind='stable')
    return Permutation.from_forward(np.argsort(order, kind='stable'))


def apply_permutation(a: CsrMatrix, x: Optional[DenseMatrix], labels: Optional[np.ndarray],
                      perm: Permutation) -> Tuple[CsrMatrix, Optional[DenseMatrix], Optional[np.ndarray]]:
    """
    Relabel both endpoints of every edge and move feature/label rows along.

    a'(π(u), π(v)) = a(u, v); x'(π(u)) = x(u); labels'(π(u)) = labels(u).

    Raises:
        ShapeError: If a is not square or sizes disagree with the permutation
    """
    if a.rows != a.cols:
        raise ShapeError(f"Adjacency must be square, got {a.shape}")
    if perm.n != a.rows:
        raise ShapeError(f"Permutation of {perm.n} vertices for a {a.shape} matrix")
    if x is not None and x.rows != a.rows:
        raise ShapeError(f"Features have {x.rows} rows, adjacency has {a.rows}")

    coo = a.to_scipy().tocoo()
    permuted = sp.coo_matrix((coo.data, (perm.forward[coo.row], perm.forward[coo.col])),
                             shape=a.shape)
    a_new = CsrMatrix.from_scipy(permuted)

    x_new = None
    if x is not None:
        x_new = DenseMatrix.from_array(perm.permute_rows(x.array), dtype=x.dtype)
    labels_new = None
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != a.rows:
            raise ShapeError(f"{labels.shape[0]} labels for {a.rows} vertices")
        labels_new = perm.permute_rows(labels)
    return a_new, x_new, labels_new


def tile_rows(a: CsrMatrix, p: PartitionVector) -> TilePlan:
    """
    Cut a into the P x P tiles of a symmetric partition (p = q).

    Row block i goes to worker i; within it the columns are split by the same
    vector so that stage j multiplies tile (i, j) with the rows owned by j.

    Raises:
        ValueError: If p does not cover both dimensions of a
    """
    if p.n != a.rows or p.n != a.cols:
        raise ValueError(f"Partition covers {p.n} vertices but matrix is {a.shape}")
    full = a.to_scipy()
    tiles: List[List[CsrMatrix]] = []
    for i in range(p.P):
        r0, r1 = p.part_range(i)
        row_block = full[r0:r1]
        row_tiles = []
        for j in range(p.P):
            c0, c1 = p.part_range(j)
            row_tiles.append(CsrMatrix.from_scipy(row_block[:, c0:c1]))
        tiles.append(row_tiles)
    plan = TilePlan(p, tiles, nnz_total=a.nnz)
    if int(plan.tile_nnz().sum()) != a.nnz:
        raise RuntimeError("Tiling lost nonzeros")
    return plan


def balance_stats(plan: TilePlan) -> BalanceReport:
    """
    Per-tile nonzero counts and per-stage max/mean ratios of a TilePlan.

    Stages whose tiles are all empty report a ratio of 1.0.
    """
    nnz = plan.tile_nnz().astype(np.float64)
    stage_max = nnz.max(axis=0)
    stage_mean = nnz.mean(axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(stage_mean > 0, stage_max / stage_mean, 1.0)
    total_mean = stage_mean.sum()
    overall = float(stage_max.sum() / total_mean) if total_mean > 0 else 1.0
    worker_load = nnz.sum(axis=1)
    extras = {
        'worker_ratio': float(worker_load.max() / worker_load.mean()) if worker_load.mean() > 0 else 1.0,
        'max_stage_ratio': float(ratio.max()),
    }
    return BalanceReport(plan.P, plan.tile_nnz(), ratio, overall, extras)
