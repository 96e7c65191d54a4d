"""
Staged 1D row-broadcast SpMM across the workers of a DeviceGroup.

Worker i owns row block i of the sparse matrix (tiles A^{i0} .. A^{i,P-1})
and row block i of the dense operand. The product runs in P stages; in stage
j worker j broadcasts its dense rows H^j and every worker i accumulates
A^{ij} · H^j into its output rows:

    C^i = C^i + A^{ij} H^j

The overlapped variant double-buffers the broadcasts (BC1/BC2 alternate by
stage parity) so that the broadcast of stage j+1 on the communication lane
runs while stage j multiplies on the compute lane.

Two further variants exist only as oracles for tests: the reduce variant
(partial products reduced onto the owner) and the column-feature variant
(dense operand split by columns, sparse row blocks broadcast).

Typical usage example:
    dp = DistSpmmPlan(plan, comm.rank, bc1, bc2, overlap=True)
    staged_spmm_overlapped(comm, dp, h_local, out_local)

Author: MGGCN maintainers
Date: October 2026
"""

import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .collectives import COMM_LANE, COMPUTE_LANE, Communicator, TimelineEvent
from .dense_core import DenseMatrix, ShapeError
from .partitioner import TilePlan
from .sparse_core import CsrMatrix, spmm


class CapacityError(ValueError):
    """A stage payload does not fit into a broadcast buffer."""


@dataclass
class DistSpmmPlan:
    """
    Per-worker view of a distributed SpMM.

    Attributes:
        plan (TilePlan): Tiles of the sparse matrix, shared by all workers
        my_rank (int): Worker owning row block my_rank
        bc1 (DenseMatrix): Broadcast buffer (max part rows x max width scalars)
        bc2 (DenseMatrix): Second broadcast buffer, only used when overlapping
        overlap (bool): Double-buffer broadcasts against SpMM stages
        compute_stall_s (float): Injected compute delay per stage (experiments)
        num_threads (int): Row-chunk threads of each tile SpMM
    """
    plan: TilePlan
    my_rank: int
    bc1: DenseMatrix
    bc2: Optional[DenseMatrix] = None
    overlap: bool = False
    compute_stall_s: float = 0.0
    num_threads: int = 1

    def __post_init__(self):
        if self.overlap and self.bc2 is None:
            raise ValueError("Overlapped SpMM needs a second broadcast buffer (bc2)")

    @property
    def local_rows(self) -> int:
        return self.plan.p.part_size(self.my_rank)

    def tile(self, j: int) -> CsrMatrix:
        return self.plan.tiles[self.my_rank][j]

    def stage_buffer(self, j: int, cols: int) -> DenseMatrix:
        """Broadcast target of stage j, sized to the actual part rows."""
        rows = self.plan.p.part_size(j)
        buf = self.bc2 if (self.overlap and j % 2 == 1) else self.bc1
        if rows * cols > buf.capacity:
            raise CapacityError(
                f"Stage {j} payload {rows}x{cols} exceeds broadcast buffer of {buf.capacity} scalars"
            )
        return buf.view(rows, cols)


def _check(comm: Communicator, dp: DistSpmmPlan, h_local: DenseMatrix,
           out_local: DenseMatrix) -> None:
    if dp.my_rank != comm.rank:
        raise ValueError(f"Plan for worker {dp.my_rank} used by worker {comm.rank}")
    if dp.plan.P != comm.P:
        raise ValueError(f"Plan has {dp.plan.P} parts but the group has {comm.P} workers")
    if h_local.rows != dp.local_rows:
        raise ShapeError(f"Worker {comm.rank} holds {h_local.rows} dense rows, owns {dp.local_rows}")
    if out_local.shape != (dp.local_rows, h_local.cols):
        raise ShapeError(f"Output is {out_local.shape}, expected {(dp.local_rows, h_local.cols)}")


def _stage_work(comm: Communicator, dp: DistSpmmPlan, j: int, h_local: DenseMatrix,
                recv: DenseMatrix, out_local: DenseMatrix):
    def work():
        # the owner multiplies from its own rows, receivers from the broadcast buffer
        operand = h_local if j == comm.rank else recv
        spmm(dp.tile(j), operand, out=out_local, accumulate=j > 0, num_threads=dp.num_threads)
        if dp.compute_stall_s > 0:
            time.sleep(dp.compute_stall_s)
    return work


def _broadcast_work(comm: Communicator, j: int, h_local: DenseMatrix, recv: DenseMatrix):
    def work():
        return comm.broadcast(j, h_local if j == comm.rank else recv)
    return work


def _run_stages(comm: Communicator, dp: DistSpmmPlan, h_local: DenseMatrix,
                out_local: DenseMatrix, overlapped: bool) -> DenseMatrix:
    _check(comm, dp, h_local, out_local)
    if h_local.cols == 0 or dp.plan.P == 0:
        return out_local
    # Stage 0 overwrites, later stages accumulate; the fill covers empty tiles
    out_local.fill(0)
    lanes = comm.lanes
    d = h_local.cols
    spmm_ids: List[int] = []
    for j in range(dp.plan.P):
        # Step 1: pick BC1/BC2 by stage parity (always BC1 without overlap)
        recv = dp.stage_buffer(j, d)
        # Step 2: broadcast j may start once the last reader of recv is done
        if overlapped:
            # broadcast j overwrites the buffer that spmm j-2 read
            deps = [spmm_ids[j - 2]] if j >= 2 else []
        else:
            deps = [spmm_ids[j - 1]] if j >= 1 else []
        bcast = lanes.submit(COMM_LANE, deps, _broadcast_work(comm, j, h_local, recv),
                             kind='broadcast', stage=j, label=f'bcast[{j}]')
        # Step 3: spmm j reads what broadcast j delivered
        spmm_ids.append(lanes.submit(COMPUTE_LANE, [bcast], _stage_work(comm, dp, j, h_local, recv, out_local),
                                     kind='spmm', stage=j, label=f'spmm[{j}]'))
    # Step 4: join both lanes before the caller touches out_local or the buffers
    lanes.wait(spmm_ids)
    lanes.forget()
    return out_local


def staged_spmm(comm: Communicator, dp: DistSpmmPlan, h_local: DenseMatrix,
                out_local: DenseMatrix) -> DenseMatrix:
    """
    P-stage broadcast SpMM without overlap (only bc1 is used).

    On return out_local on worker i holds rows p(i)..p(i+1) of A · H.

    Args:
        comm: This worker's communicator
        dp: Distributed plan of this worker
        h_local: Dense rows owned by this worker
        out_local: Output rows of this worker, (local rows, h cols)

    Returns:
        out_local

    Raises:
        ShapeError: If the local blocks do not match the plan
        CapacityError: If a stage payload exceeds the broadcast buffer
    """
    single = DistSpmmPlan(dp.plan, dp.my_rank, dp.bc1, None, False,
                          dp.compute_stall_s, dp.num_threads)
    return _run_stages(comm, single, h_local, out_local, overlapped=False)


def staged_spmm_overlapped(comm: Communicator, dp: DistSpmmPlan, h_local: DenseMatrix,
                           out_local: DenseMatrix) -> DenseMatrix:
    """
    Staged SpMM with the broadcast of stage j+1 overlapping the SpMM of stage j.

    spmm(j) waits for broadcast(j); broadcast(j+1) waits for spmm(j-1), the
    last reader of the buffer it is about to overwrite. The numerical result
    is bitwise identical to staged_spmm.
    """
    if not dp.overlap:
        raise ValueError("Plan was built without overlap (no bc2)")
    return _run_stages(comm, dp, h_local, out_local, overlapped=True)


def run_staged_spmm(comm: Communicator, dp: DistSpmmPlan, h_local: DenseMatrix,
                    out_local: DenseMatrix) -> DenseMatrix:
    """Dispatch on dp.overlap."""
    if dp.overlap:
        return staged_spmm_overlapped(comm, dp, h_local, out_local)
    return staged_spmm(comm, dp, h_local, out_local)


def reduce_spmm_reference(comm: Communicator, dp: DistSpmmPlan, h_local: DenseMatrix,
                          out_local: DenseMatrix) -> DenseMatrix:
    """
    Column-distribution SpMM: stage i reduces Σ_j A^{ij} H^j onto worker i.

    Worker j computes the partial product of tile (i, j) with its own rows,
    then the partials are summed in rank order onto worker i. Reference
    implementation for oracle tests; allocates one partial per stage.
    """
    _check(comm, dp, h_local, out_local)
    p = dp.plan.p
    for i in range(dp.plan.P):
        partial = DenseMatrix.zeros(p.part_size(i), h_local.cols, h_local.dtype)
        with comm.trace('spmm', stage=i, label=f'partial[{i}]'):
            spmm(dp.plan.tiles[i][comm.rank], h_local, out=partial)
        with comm.trace('reduce', lane=COMM_LANE, stage=i, label=f'reduce[{i}]'):
            comm.reduce_sum(i, partial)
        if i == comm.rank:
            np.copyto(out_local.data, partial.data)
    return out_local


def column_feature_spmm_reference(comm: Communicator, a_rows: CsrMatrix, plan: TilePlan,
                                  h_cols: DenseMatrix, out_cols: DenseMatrix) -> DenseMatrix:
    """
    Column-feature SpMM: H split by columns, sparse row blocks broadcast.

    Worker j holds all n rows of its column slice H^{1j}; worker i holds the
    sparse row block A^{i1} (`a_rows`, global column indices). In stage i the
    row block of worker i is broadcast and every worker j computes rows
    p(i)..p(i+1) of C^{ij} = A^{i1} H^{1j}.

    Args:
        comm: This worker's communicator
        a_rows: This worker's sparse row block
        plan: Tile plan giving the partition and per-block nnz (shared metadata)
        h_cols: (n, local columns) dense slice
        out_cols: (n, local columns) result slice
    """
    p = plan.p
    n = p.n
    if h_cols.rows != n or out_cols.shape != h_cols.shape:
        raise ShapeError(f"Column slices must be ({n}, d_j); got {h_cols.shape} and {out_cols.shape}")
    block_nnz = plan.tile_nnz().sum(axis=1)
    for i in range(plan.P):
        r0, r1 = p.part_range(i)
        nnz = int(block_nnz[i])
        if i == comm.rank:
            row_ptr, col_idx, values = a_rows.row_ptr, a_rows.col_idx, a_rows.values
        else:
            row_ptr = np.empty(r1 - r0 + 1, dtype=np.int64)
            col_idx = np.empty(nnz, dtype=np.int64)
            values = np.empty(nnz, dtype=a_rows.dtype)
        with comm.trace('broadcast', lane=COMM_LANE, stage=i, label=f'bcast_rows[{i}]'):
            comm.broadcast(i, row_ptr)
            comm.broadcast(i, col_idx)
            comm.broadcast(i, values)
        block = CsrMatrix(r1 - r0, n, row_ptr, col_idx, values, check=False)
        with comm.trace('spmm', stage=i, label=f'spmm_rows[{i}]'):
            spmm(block, h_cols, out=out_cols.row_slice(r0, r1))
    return out_cols


def stage_records(events: List[TimelineEvent]) -> pd.DataFrame:
    """
    Per-stage communication and computation time of staged SpMM runs.

    Returns:
        DataFrame with columns stage, worker, comm_us, comp_us
    """
    rows: Dict[tuple, Dict[str, float]] = {}
    for e in events:
        if e.kind not in ('broadcast', 'spmm') or e.stage < 0:
            continue
        rec = rows.setdefault((e.stage, e.worker), {'comm_us': 0.0, 'comp_us': 0.0})
        rec['comm_us' if e.kind == 'broadcast' else 'comp_us'] += e.t_end - e.t_start
    frame = pd.DataFrame([{'stage': s, 'worker': w, **v} for (s, w), v in rows.items()],
                         columns=['stage', 'worker', 'comm_us', 'comp_us'])
    return frame.sort_values(['stage', 'worker']).reset_index(drop=True)
