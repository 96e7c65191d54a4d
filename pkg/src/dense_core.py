"""
Dense matrix type and the GeMM / activation / loss kernels of a GCN layer.

This module provides the DenseMatrix class, a row-major matrix backed by one
contiguous numpy buffer, together with the kernels every GCN layer is built
from: GeMM, ReLU forward/backward and the masked softmax cross entropy loss.
All kernels write into a caller-provided output so that the training engine
can run entirely inside its preallocated buffer pool.

Typical usage example:
    h = DenseMatrix.from_array(features)
    w = DenseMatrix.zeros(h.cols, 16)
    hw = DenseMatrix.zeros(h.rows, 16)
    gemm(h, w, out=hw)
    relu_forward(hw, out=hw)
"""

import struct
import threading
import tracemalloc
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np


DTYPES = {'f32': np.float32, 'f64': np.float64}

MGDM_MAGIC = b'MGDM'
MGDM_HEADER = struct.Struct('<4sQQB')

GATE_CHUNK = 1 << 14


class ShapeError(ValueError):
    """Raised when matrix dimensions do not agree."""


def resolve_dtype(name: Union[str, np.dtype, type]) -> np.dtype:
    """
    Map a scalar width name ('f32' or 'f64') to a numpy dtype.

    Args:
        name: 'f32', 'f64' or anything numpy accepts as a float dtype

    Returns:
        numpy dtype (float32 or float64)
    """
    if isinstance(name, str) and name in DTYPES:
        return np.dtype(DTYPES[name])
    try:
        dtype = np.dtype(name)
    except TypeError:
        raise ValueError(f"Unsupported scalar type: {name} (use f32 or f64)") from None
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported scalar type: {name} (use f32 or f64)")
    return dtype


class AllocationAudit:
    """
    Record allocations made while the audit is active.

    Two views are kept. Every DenseMatrix constructor call is recorded with
    its shape, which is what the buffer-plan check counts. With
    `trace_memory=True` the audit also runs tracemalloc (numpy reports its
    array buffers there) and keeps the peak of bytes allocated above the level
    at entry, so temporaries created inside numpy or scipy calls show up too.

    Example:
        >>> with AllocationAudit(trace_memory=True) as audit:
        ...     model.train_step()
        >>> audit.count(min_elements=local_rows)
        0
        >>> audit.peak_bytes < one_buffer_bytes
        True
    """

    _lock = threading.Lock()
    _active: List['AllocationAudit'] = []

    def __init__(self, trace_memory: bool = False):
        self.records: List[Tuple[int, int]] = []
        self.trace_memory = trace_memory
        self.peak_bytes = 0
        self._baseline = 0
        self._started_tracing = False

    def __enter__(self) -> 'AllocationAudit':
        if self.trace_memory:
            if not tracemalloc.is_tracing():
                tracemalloc.start()
                self._started_tracing = True
            tracemalloc.reset_peak()
            self._baseline = tracemalloc.get_traced_memory()[0]
        with AllocationAudit._lock:
            AllocationAudit._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        with AllocationAudit._lock:
            AllocationAudit._active.remove(self)
        if self.trace_memory:
            self.peak_bytes = max(0, tracemalloc.get_traced_memory()[1] - self._baseline)
            if self._started_tracing:
                tracemalloc.stop()
                self._started_tracing = False

    @classmethod
    def _record(cls, rows: int, cols: int) -> None:
        if not cls._active:
            return
        with cls._lock:
            for audit in cls._active:
                audit.records.append((rows, cols))

    def count(self, min_elements: int = 0) -> int:
        """Number of recorded allocations holding at least min_elements scalars."""
        return sum(1 for r, c in self.records if r * c >= min_elements)


class DenseMatrix:
    """
    Row-major dense matrix stored in one contiguous scalar buffer.

    Element (i, j) lives at offset i * cols + j of `data`. A DenseMatrix may be
    a view into a larger buffer (see `view` and `row_slice`); views share memory
    with their parent, which is how the broadcast buffers are reused for stages
    of different sizes.

    Attributes:
        rows (int): Number of rows
        cols (int): Number of columns
        data (np.ndarray): 1-D contiguous buffer of length rows * cols
    """

    def __init__(self, rows: int, cols: int, data: np.ndarray):
        if data.ndim != 1 or data.size != rows * cols:
            raise ShapeError(
                f"Buffer of {data.size} scalars cannot hold a {rows}x{cols} matrix"
            )
        if not data.flags['C_CONTIGUOUS']:
            raise ValueError("DenseMatrix requires a contiguous buffer")
        self.rows = int(rows)
        self.cols = int(cols)
        self.data = data

    @classmethod
    def zeros(cls, rows: int, cols: int, dtype='f64') -> 'DenseMatrix':
        """Allocate a zero-filled matrix."""
        AllocationAudit._record(rows, cols)
        return cls(rows, cols, np.zeros(rows * cols, dtype=resolve_dtype(dtype)))

    @classmethod
    def empty(cls, rows: int, cols: int, dtype='f64') -> 'DenseMatrix':
        """Allocate an uninitialised matrix."""
        AllocationAudit._record(rows, cols)
        return cls(rows, cols, np.empty(rows * cols, dtype=resolve_dtype(dtype)))

    @classmethod
    def from_array(cls, array: np.ndarray, dtype=None) -> 'DenseMatrix':
        """
        Copy a 2-D array into a new DenseMatrix.

        Args:
            array: Any 2-D array-like
            dtype: Optional target scalar type (defaults to the array's float type)

        Returns:
            New DenseMatrix owning a copy of the data
        """
        arr = np.asarray(array)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ShapeError(f"Expected a 2-D array, got shape {arr.shape}")
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        out = cls.empty(arr.shape[0], arr.shape[1], dtype)
        out.array[...] = arr
        return out

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    @property
    def array(self) -> np.ndarray:
        """2-D numpy view (rows, cols) sharing memory with `data`."""
        return self.data.reshape(self.rows, self.cols)

    @property
    def capacity(self) -> int:
        return self.data.size

    def view(self, rows: int, cols: int) -> 'DenseMatrix':
        """
        Reinterpret the leading rows * cols scalars as a (rows, cols) matrix.

        Raises:
            ShapeError: If the requested shape exceeds the buffer
        """
        if rows * cols > self.data.size:
            raise ShapeError(
                f"View {rows}x{cols} exceeds buffer of {self.data.size} scalars "
                f"(shape {self.rows}x{self.cols})"
            )
        return DenseMatrix(rows, cols, self.data[:rows * cols])

    def row_slice(self, start: int, stop: int) -> 'DenseMatrix':
        """Rows [start, stop) as a view (full width)."""
        if not 0 <= start <= stop <= self.rows:
            raise ShapeError(f"Row range [{start}, {stop}) outside 0..{self.rows}")
        return DenseMatrix(stop - start, self.cols,
                           self.data[start * self.cols:stop * self.cols])

    def copy(self) -> 'DenseMatrix':
        AllocationAudit._record(self.rows, self.cols)
        return DenseMatrix(self.rows, self.cols, self.data.copy())

    def fill(self, value: float) -> 'DenseMatrix':
        self.data.fill(value)
        return self

    def __repr__(self) -> str:
        return f"DenseMatrix({self.rows}x{self.cols}, {self.dtype})"


def _require_same_shape(*mats: DenseMatrix) -> None:
    first = mats[0]
    for m in mats[1:]:
        if m.shape != first.shape:
            raise ShapeError(f"Shape mismatch: {first.shape} vs {m.shape}")


def gemm(a: DenseMatrix, b: DenseMatrix, out: DenseMatrix,
         transpose_a: bool = False, transpose_b: bool = False,
         accumulate: bool = False) -> DenseMatrix:
    """
    General matrix multiply: out = (accumulate ? out : 0) + op(a) · op(b).

    Args:
        a: Left operand
        b: Right operand
        out: Result matrix, shape (rows of op(a), cols of op(b))
        transpose_a: Use a^T
        transpose_b: Use b^T
        accumulate: Add into the existing contents of out (costs one
            temporary the size of out; meant for small weight matrices)

    Returns:
        out

    Raises:
        ShapeError: If inner dimensions or the output shape disagree

    Example:
        >>> gemm(h, w, out=hw)             # HW = H * W
        >>> gemm(h, hw_g, out=w_g, transpose_a=True)   # W_G = H^T * HW_G
    """
    lhs = a.array.T if transpose_a else a.array
    rhs = b.array.T if transpose_b else b.array
    if lhs.shape[1] != rhs.shape[0]:
        raise ShapeError(
            f"gemm inner dimensions differ: op(a) is {lhs.shape}, op(b) is {rhs.shape}"
        )
    expected = (lhs.shape[0], rhs.shape[1])
    if out.shape != expected:
        raise ShapeError(f"gemm output is {out.shape}, expected {expected}")

    if accumulate:
        out.array[...] += lhs @ rhs
    else:
        np.matmul(lhs, rhs, out=out.array)
    return out


def relu_forward(x: DenseMatrix, out: DenseMatrix) -> DenseMatrix:
    """out = max(0, x); out may alias x."""
    _require_same_shape(x, out)
    np.maximum(x.data, 0, out=out.data)
    return out


def relu_backward(upstream: DenseMatrix, activated: DenseMatrix,
                  out: DenseMatrix) -> DenseMatrix:
    """
    Gate the upstream gradient by the sign of the forward output.

    `activated` is the post-ReLU buffer (the plan overwrites the pre-activation
    in place), so the gate is activated > 0. out may alias upstream or
    activated; neither case allocates a matrix-sized temporary.
    """
    _require_same_shape(upstream, activated, out)
    if np.may_share_memory(out.data, upstream.data):
        # gate in fixed-size chunks so the boolean mask stays small
        for start, stop in iter_row_blocks(out.data.size, GATE_CHUNK):
            out.data[start:stop] *= activated.data[start:stop] > 0
        return out
    # out becomes the 0/1 gate first (fine when out is activated), then the product
    np.heaviside(activated.data, 0.0, out=out.data)
    np.multiply(out.data, upstream.data, out=out.data)
    return out


def softmax_xent(logits: DenseMatrix, labels: np.ndarray,
                 mask: Optional[np.ndarray] = None,
                 normalizer: Optional[int] = None,
                 out: Optional[DenseMatrix] = None) -> Tuple[float, DenseMatrix]:
    """
    Masked softmax cross entropy and its gradient with respect to the logits.

    loss = Σ_{v in mask} -log softmax(logits_v)[labels_v] / normalizer
    grad_v = (softmax(logits_v) - onehot(labels_v)) / normalizer for masked v,
    zero rows otherwise. Row maxima are subtracted before exponentiating.

    The softmax is evaluated inside `out`; apart from per-row vectors no
    temporary is created, so passing out=logits keeps the step allocation-free.

    Args:
        logits: (rows, classes) scores
        labels: Integer class per row
        mask: Boolean row mask or array of row indices (default: all rows)
        normalizer: Divisor of the loss; the global masked count when rows are
            distributed (default: number of masked rows here)
        out: Gradient destination; may be `logits` itself

    Returns:
        Tuple of (loss, gradient matrix)

    Raises:
        ValueError: If the mask is empty or a masked label is out of range
    """
    labels = np.asarray(labels)
    if labels.shape[0] != logits.rows:
        raise ShapeError(f"{labels.shape[0]} labels for {logits.rows} logit rows")
    rows = _mask_to_rows(mask, logits.rows)
    if normalizer is None:
        normalizer = rows.size
    if normalizer <= 0:
        raise ValueError("softmax_xent needs a nonempty mask")
    if out is None:
        out = DenseMatrix.empty(logits.rows, logits.cols, logits.dtype)
    _require_same_shape(logits, out)

    target = labels[rows].astype(np.int64)
    if target.size and (target.min() < 0 or target.max() >= logits.cols):
        bad = target[(target < 0) | (target >= logits.cols)][0]
        raise ValueError(f"Label {bad} outside [0, {logits.cols})")

    g = out.array
    if out.data is not logits.data:
        np.copyto(out.data, logits.data)
    if g.shape[1] == 0:
        return 0.0, out
    # shifted logits z = x - max(x); softmax = exp(z) / Σ exp(z)
    g -= g.max(axis=1, keepdims=True)
    picked = g[rows, target]
    np.exp(g, out=g)
    row_sum = g.sum(axis=1)
    g /= row_sum[:, None]
    loss = float((np.log(row_sum[rows]) - picked).sum() / normalizer)

    g[rows, target] -= 1.0
    g /= normalizer
    if rows.size < logits.rows:
        unmasked = np.ones(logits.rows, dtype=bool)
        unmasked[rows] = False
        g[unmasked] = 0
    return loss, out


def accuracy(logits: DenseMatrix, labels: np.ndarray,
             mask: Optional[np.ndarray] = None) -> Tuple[int, int]:
    """Return (correct, total) argmax predictions over the masked rows."""
    rows = _mask_to_rows(mask, logits.rows)
    if rows.size == 0:
        return 0, 0
    pred = logits.array.argmax(axis=1)[rows]
    return int((pred == np.asarray(labels)[rows]).sum()), int(rows.size)


def _mask_to_rows(mask: Optional[np.ndarray], n: int) -> np.ndarray:
    if mask is None:
        return np.arange(n)
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.size != n:
            raise ShapeError(f"Mask of length {mask.size} for {n} rows")
        return np.flatnonzero(mask)
    return mask.astype(np.int64)


def write_dense(path: Union[str, Path], matrices, append: bool = False) -> Path:
    """
    Write one or more matrices in the MGDM binary format.

    Each record is the header {magic "MGDM", u64 rows, u64 cols, u8 dtype
    width} followed by the little-endian row-major payload. Several records
    written back to back form a checkpoint.

    Args:
        path: Output file
        matrices: A DenseMatrix or a list of them
        append: Append to an existing file instead of truncating

    Returns:
        Path written
    """
    path = Path(path)
    if isinstance(matrices, DenseMatrix):
        matrices = [matrices]
    with open(path, 'ab' if append else 'wb') as fh:
        for m in matrices:
            fh.write(MGDM_HEADER.pack(MGDM_MAGIC, m.rows, m.cols, m.dtype.itemsize))
            fh.write(m.data.astype(m.dtype.newbyteorder('<'), copy=False).tobytes())
    return path


def read_dense_all(path: Union[str, Path]) -> List[DenseMatrix]:
    """Read every MGDM record of a file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dense matrix file not found: {path}")
    raw = path.read_bytes()
    records: List[DenseMatrix] = []
    offset = 0
    widths: Dict[int, str] = {4: '<f4', 8: '<f8'}
    while offset < len(raw):
        if len(raw) - offset < MGDM_HEADER.size:
            raise ValueError(f"{path}: truncated MGDM header at byte {offset}")
        magic, rows, cols, width = MGDM_HEADER.unpack_from(raw, offset)
        if magic != MGDM_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at byte {offset}")
        if width not in widths:
            raise ValueError(f"{path}: unsupported scalar width {width}")
        offset += MGDM_HEADER.size
        count = rows * cols
        payload = np.frombuffer(raw, dtype=widths[width], count=count, offset=offset)
        if payload.size != count:
            raise ValueError(f"{path}: payload shorter than {rows}x{cols}")
        offset += count * width
        records.append(DenseMatrix(rows, cols, payload.astype(payload.dtype.newbyteorder('='))))
    return records


def read_dense(path: Union[str, Path]) -> DenseMatrix:
    """Read the first MGDM record of a file."""
    records = read_dense_all(path)
    if not records:
        raise ValueError(f"{path}: no MGDM record")
    return records[0]


def iter_row_blocks(rows: int, block: int) -> Iterator[Tuple[int, int]]:
    """Yield [start, stop) row ranges of at most `block` rows."""
    for start in range(0, rows, block):
        yield start, min(rows, start + block)
