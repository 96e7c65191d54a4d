"""
L-layer GCN with hand-derived forward/backward passes over a shared buffer pool.

Each worker runs the same layer pipeline on its row block of the graph:

    forward   HW  = H · W             (GeMM, local)
              AHW = Â^T · HW          (staged SpMM)
              H'  = relu(AHW)         (in place)
    backward  AHW_G = relu'(H_G', H')
              HW_G  = Â · AHW_G       (staged SpMM)
              W_G   = H^T · HW_G      (GeMM, local, then all-reduced)
              H_G   = HW_G · W^T      (GeMM, local)

Memory follows a fixed plan of L + 3 large buffers per worker: one output
buffer per layer (AHW_B), one temporary shared by every layer (HW_B) and two
broadcast buffers (BC1, BC2). Forward layer l writes only into its own
output buffer; the backward pass reuses the same buffers for gradients.

Typical usage example:
    cfg = GcnConfig(layer_dims=[16, 32, 4])
    graph = prepare_graph(adjacency, uniform_partition(n, comm.P))
    model = GcnModel(cfg, comm, graph, x_local, y_local)
    for epoch in range(cfg.epochs):
        loss = model.train_step()
"""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .collectives import COMM_LANE, Communicator
from .dense_core import (DenseMatrix, ShapeError, accuracy, gemm,
                         read_dense_all, relu_backward, relu_forward,
                         softmax_xent, write_dense)
from .dist_spmm import DistSpmmPlan, run_staged_spmm
from .partitioner import PartitionVector, TilePlan, tile_rows
from .sparse_core import CsrMatrix, normalize_in_degree, transpose


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


@dataclass
class GcnConfig:
    """
    Model and run configuration.

    Attributes:
        layer_dims: [d(0), d(1), ..., d(L)]; d(0) is the feature width and
            d(L) the number of classes
        lr, beta1, beta2, epsilon: Adam hyperparameters
        epochs: Training steps (one full-batch step per epoch)
        seed: Seed for weights and the vertex permutation
        permute: Randomly relabel vertices before partitioning
        overlap: Overlap broadcasts with SpMM stages (BC1/BC2 double buffering)
        skip_first_backward_spmm: Treat Â as identity in layer 0's backward pass
        order_swap: Run SpMM before GeMM when d(l) < d(l+1)
        dtype: 'f32' or 'f64'
        spmm_threads: Row-chunk threads per tile SpMM
    """
    layer_dims: List[int]
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 50
    seed: int = 0
    permute: bool = False
    overlap: bool = True
    skip_first_backward_spmm: bool = False
    order_swap: bool = False
    dtype: str = 'f64'
    spmm_threads: int = 1

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise ConfigError("layer_dims needs at least [d_in, d_out] (L >= 1)")
        if min(self.layer_dims) < 1:
            raise ConfigError(f"All layer widths must be >= 1: {self.layer_dims}")
        if self.dtype not in ('f32', 'f64'):
            raise ConfigError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")
        if self.epochs < 0 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0 and lr > 0")

    @property
    def L(self) -> int:
        return len(self.layer_dims) - 1

    def swapped(self, l: int) -> bool:
        """Whether layer l runs SpMM before GeMM."""
        return self.order_swap and self.layer_dims[l] < self.layer_dims[l + 1]

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'GcnConfig':
        """
        Build from a mapping; unknown keys are rejected.

        Raises:
            ConfigError: On unknown keys or invalid values
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {unknown}")
        if 'layer_dims' not in values:
            raise ConfigError("Config must define layer_dims")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> 'GcnConfig':
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")
        return cls.from_dict(values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class LayerParams:
    """Weights of one layer plus gradient and Adam moments (replicated)."""
    W: DenseMatrix
    W_grad: DenseMatrix
    adam_m: DenseMatrix
    adam_v: DenseMatrix

    @classmethod
    def zeros(cls, d_in: int, d_out: int, dtype='f64') -> 'LayerParams':
        return cls(*(DenseMatrix.zeros(d_in, d_out, dtype) for _ in range(4)))


@dataclass
class GraphPlans:
    """Tiles of Â^T (forward SpMM) and Â (backward SpMM) under one partition."""
    p: PartitionVector
    forward: TilePlan
    backward: TilePlan


def prepare_graph(adjacency: CsrMatrix, p: PartitionVector, dtype='f64') -> GraphPlans:
    """
    Normalise by in-degree and tile both Â^T and Â.

    Both orientations are stored so that forward and backward passes use the
    same row-oriented SpMM kernel.
    """
    a_hat = normalize_in_degree(adjacency.astype(dtype))
    a_hat_t = transpose(a_hat)
    return GraphPlans(p, tile_rows(a_hat_t, p), tile_rows(a_hat, p))


class BufferPool:
    """
    The L + 3 large buffers of one worker, and nothing else.

    Every intermediate of a training step is a view into one of these, so
    large_buffers() lists everything the pool owns.

    Attributes:
        hw_buf (DenseMatrix): Shared temporary between SpMM and GeMM
            (local rows x max layer width)
        bc1, bc2 (DenseMatrix): Broadcast buffers (max part rows x max width)
        ahw_bufs (List[DenseMatrix]): Output of layer l, local rows x d(l+1)
    """

    def __init__(self, cfg: GcnConfig, local_rows: int, max_part_rows: int):
        width = max(cfg.layer_dims)
        dtype = cfg.dtype
        self.local_rows = local_rows
        self.hw_buf = DenseMatrix.zeros(local_rows, width, dtype)
        self.bc1 = DenseMatrix.zeros(max_part_rows, width, dtype)
        self.bc2 = DenseMatrix.zeros(max_part_rows, width, dtype)
        self.ahw_bufs = [DenseMatrix.zeros(local_rows, cfg.layer_dims[l + 1], dtype)
                         for l in range(cfg.L)]

    def large_buffers(self) -> Dict[str, DenseMatrix]:
        named = {'hw': self.hw_buf, 'bc1': self.bc1, 'bc2': self.bc2}
        named.update({f'ahw[{l}]': b for l, b in enumerate(self.ahw_bufs)})
        return named

    def large_buffer_count(self) -> int:
        return len(self.large_buffers())

    def nbytes(self) -> int:
        return sum(b.nbytes for b in self.large_buffers().values())

    def hw(self, cols: int) -> DenseMatrix:
        """hw_buf viewed as (local rows, cols)."""
        return self.hw_buf.view(self.local_rows, cols)


def init_params(cfg: GcnConfig, comm: Optional[Communicator] = None) -> List[LayerParams]:
    """
    Glorot-uniform weights, generated on rank 0 and broadcast to every worker.

    W(l) entries are drawn from U(-s, s) with s = sqrt(6 / (d_in + d_out)).
    """
    rng = np.random.default_rng(cfg.seed)
    params = []
    for l in range(cfg.L):
        d_in, d_out = cfg.layer_dims[l], cfg.layer_dims[l + 1]
        layer = LayerParams.zeros(d_in, d_out, cfg.dtype)
        if comm is None or comm.rank == 0:
            limit = np.sqrt(6.0 / (d_in + d_out))
            layer.W.array[...] = rng.uniform(-limit, limit, size=(d_in, d_out))
        if comm is not None:
            comm.broadcast(0, layer.W)
        params.append(layer)
    return params


def adam_step(params: List[LayerParams], t: int, cfg: GcnConfig) -> List[LayerParams]:
    """
    One Adam update with bias correction; gradients are zeroed afterwards.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    W <- W - lr * m_hat / (sqrt(v_hat) + eps)

    Raises:
        ValueError: If t < 1
    """
    if t < 1:
        raise ValueError(f"Adam step index starts at 1, got {t}")
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for p in params:
        g, m, v = p.W_grad.data, p.adam_m.data, p.adam_v.data
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.W.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        g.fill(0)
    return params


class GcnModel:
    """
    Per-worker GCN state: local rows, replicated parameters and the buffer pool.

    Attributes:
        cfg (GcnConfig): Configuration
        comm (Communicator): This worker's handle on the device group
        pool (BufferPool): The L + 3 buffers
        params (List[LayerParams]): Replicated weights
        step (int): Completed optimizer steps
        last_metrics (Dict[str, float]): Loss and accuracy of the latest step
    """

    def __init__(self, cfg: GcnConfig, comm: Communicator, graph: GraphPlans,
                 features: DenseMatrix, labels: np.ndarray,
                 mask: Optional[np.ndarray] = None, global_mask_count: Optional[int] = None,
                 params: Optional[List[LayerParams]] = None):
        self.cfg = cfg
        self.comm = comm
        self.graph = graph
        p = graph.p
        local_rows = p.part_size(comm.rank)
        if features.shape != (local_rows, cfg.layer_dims[0]):
            raise ShapeError(f"Worker {comm.rank} features are {features.shape}, "
                             f"expected {(local_rows, cfg.layer_dims[0])}")
        self.features = features
        self.labels = np.asarray(labels)
        self.mask = np.ones(local_rows, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if global_mask_count is None:
            count = np.array([self.mask.sum()], dtype=np.float64)
            comm.all_reduce_sum(count)
            global_mask_count = int(count[0])
        self.global_mask_count = int(global_mask_count)
        self.pool = BufferPool(cfg, local_rows, p.max_part)
        common = dict(overlap=cfg.overlap, num_threads=cfg.spmm_threads)
        self.fwd_plan = DistSpmmPlan(graph.forward, comm.rank, self.pool.bc1, self.pool.bc2, **common)
        self.bwd_plan = DistSpmmPlan(graph.backward, comm.rank, self.pool.bc1, self.pool.bc2, **common)
        self.params = params if params is not None else init_params(cfg, comm)
        self.step = 0
        self.last_metrics: Dict[str, float] = {}
        self._forward_done = False

    @property
    def local_rows(self) -> int:
        return self.pool.local_rows

    def layer_input(self, l: int) -> DenseMatrix:
        return self.features if l == 0 else self.pool.ahw_bufs[l - 1]

    # -- forward -----------------------------------------------------------

    def forward_layer(self, l: int, h_in: DenseMatrix) -> DenseMatrix:
        """
        Run layer l; the result lands in pool.ahw_bufs[l].

        Default order is GeMM -> SpMM; with order_swap and d(l) < d(l+1) the
        SpMM runs first on the narrower matrix. ReLU is applied in place except
        on the last layer, whose raw logits feed the loss.
        """
        d_in, d_out = self.cfg.layer_dims[l], self.cfg.layer_dims[l + 1]
        if h_in.shape != (self.local_rows, d_in):
            raise ShapeError(f"Layer {l} input is {h_in.shape}, expected {(self.local_rows, d_in)}")
        out = self.pool.ahw_bufs[l]
        w = self.params[l].W
        if self.cfg.swapped(l):
            ah = self.pool.hw(d_in)
            run_staged_spmm(self.comm, self.fwd_plan, h_in, ah)
            with self.comm.trace('gemm', label=f'fwd_gemm[{l}]'):
                gemm(ah, w, out)
        else:
            hw = self.pool.hw(d_out)
            with self.comm.trace('gemm', label=f'fwd_gemm[{l}]'):
                gemm(h_in, w, hw)
            run_staged_spmm(self.comm, self.fwd_plan, hw, out)
        if l < self.cfg.L - 1:
            with self.comm.trace('activation', label=f'relu[{l}]'):
                relu_forward(out, out)
        return out

    def forward(self) -> DenseMatrix:
        h = self.features
        for l in range(self.cfg.L):
            h = self.forward_layer(l, h)
        self._forward_done = True
        return h

    def predict(self) -> np.ndarray:
        """Forward pass only; returns a copy of the local logits."""
        return self.forward().array.copy()

    # -- loss --------------------------------------------------------------

    def loss_and_grad(self) -> float:
        """
        Softmax cross entropy on the local rows; the gradient overwrites the logits.

        Local loss sums are divided by the global mask size and all-reduced,
        so the returned value is the global mean loss on every worker.
        """
        logits = self.pool.ahw_bufs[-1]
        correct, total = accuracy(logits, self.labels, self.mask)
        with self.comm.trace('loss'):
            local_loss = 0.0
            if total > 0:
                local_loss, _ = softmax_xent(logits, self.labels, self.mask,
                                             normalizer=self.global_mask_count, out=logits)
            else:
                logits.fill(0)
        stats = np.array([local_loss, correct, total], dtype=np.float64)
        with self.comm.trace('all_reduce', lane=COMM_LANE, label='loss'):
            self.comm.all_reduce_sum(stats)
        self.last_metrics = {'loss': float(stats[0]),
                             'accuracy': float(stats[1] / stats[2]) if stats[2] else 0.0}
        return float(stats[0])

    def evaluate_loss(self) -> float:
        self.forward()
        return self.loss_and_grad()

    # -- backward ----------------------------------------------------------

    def backward_layer(self, l: int) -> Optional[DenseMatrix]:
        """
        Backward pass of layer l; pool.ahw_bufs[l] must hold AHW_G.

        Computes the local W gradient, all-reduces it, and (for l > 0) writes
        the ReLU-gated input gradient of layer l into pool.ahw_bufs[l-1], the
        buffer that held this layer's input. No buffer outside the pool is
        touched: H_G is staged in bc1, which is idle between SpMM calls.

        Returns:
            The gated gradient buffer of layer l-1, or None for l == 0
        """
        if not self._forward_done:
            raise RuntimeError("backward_layer called before a forward pass")
        cfg, pool = self.cfg, self.pool
        d_in, d_out = cfg.layer_dims[l], cfg.layer_dims[l + 1]
        ahw_g = pool.ahw_bufs[l]
        h_in = self.layer_input(l)
        params = self.params[l]
        skip_spmm = l == 0 and cfg.skip_first_backward_spmm

        if cfg.swapped(l):
            # Step 1: Â^T H again, into hw_buf (forward overwrote it)
            if skip_spmm:
                ah = h_in
            else:
                ah = pool.hw(d_in)
                run_staged_spmm(self.comm, self.fwd_plan, h_in, ah)
            # Step 2: W_G = (Â^T H)^T · AHW_G
            with self.comm.trace('gemm', label=f'wgrad[{l}]'):
                gemm(ah, ahw_g, params.W_grad, transpose_a=True)
            self._reduce_grad(l)
            if l == 0:
                return None
            # Step 3: AHW_G · W^T, then Â on the narrower side
            g = pool.hw(d_in)
            with self.comm.trace('gemm', label=f'hgrad[{l}]'):
                gemm(ahw_g, params.W, g, transpose_b=True)
            # AHW_G is consumed; its buffer is wide enough (d_in < d_out)
            h_g = ahw_g.view(self.local_rows, d_in)
            run_staged_spmm(self.comm, self.bwd_plan, g, h_g)
            with self.comm.trace('activation', label=f'relu_grad[{l - 1}]'):
                relu_backward(h_g, h_in, out=h_in)
            return h_in

        # Step 1: HW_G = Â · AHW_G
        if skip_spmm:
            hw_g = ahw_g
        else:
            hw_g = pool.hw(d_out)
            run_staged_spmm(self.comm, self.bwd_plan, ahw_g, hw_g)
        # Step 2: W_G = H^T · HW_G
        with self.comm.trace('gemm', label=f'wgrad[{l}]'):
            gemm(h_in, hw_g, params.W_grad, transpose_a=True)
        self._reduce_grad(l)
        if l == 0:
            return None
        # Step 3: H_G = HW_G · W^T into bc1, gated into H's buffer
        h_g = pool.bc1.view(self.local_rows, d_in)
        with self.comm.trace('gemm', label=f'hgrad[{l}]'):
            gemm(hw_g, params.W, h_g, transpose_b=True)
        with self.comm.trace('activation', label=f'relu_grad[{l - 1}]'):
            relu_backward(h_g, h_in, out=h_in)
        return h_in

    def _reduce_grad(self, l: int) -> None:
        with self.comm.trace('all_reduce', lane=COMM_LANE, label=f'wgrad[{l}]'):
            self.comm.all_reduce_sum(self.params[l].W_grad)

    def backward(self) -> None:
        for l in range(self.cfg.L - 1, -1, -1):
            self.backward_layer(l)
        self._forward_done = False

    def zero_grad(self) -> None:
        for p in self.params:
            p.W_grad.fill(0)

    def forward_backward(self) -> float:
        """Forward, loss and backward without an optimizer step."""
        self.zero_grad()
        self.forward()
        loss = self.loss_and_grad()
        self.backward()
        return loss

    def train_step(self) -> float:
        """
        One full-batch epoch: forward, loss, backward and Adam.

        Returns:
            Global mean training loss measured before the update
        """
        loss = self.forward_backward()
        self.step += 1
        with self.comm.trace('adam'):
            adam_step(self.params, self.step, self.cfg)
        return loss


def save_checkpoint(path: Union[str, Path], params: List[LayerParams], cfg: GcnConfig) -> Path:
    """
    Write all W matrices back to back in MGDM format plus a JSON sidecar.

    The sidecar (same name, .json suffix) holds the config and layer shapes.
    """
    path = Path(path)
    write_dense(path, [p.W for p in params])
    sidecar = path.with_suffix('.json')
    sidecar.write_text(json.dumps({
        'config': cfg.to_dict(),
        'shapes': [[p.W.rows, p.W.cols] for p in params],
    }, indent=2))
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[GcnConfig, List[DenseMatrix]]:
    path = Path(path)
    meta = json.loads(path.with_suffix('.json').read_text())
    cfg = GcnConfig.from_dict(meta['config'])
    weights = read_dense_all(path)
    shapes = [tuple(s) for s in meta['shapes']]
    if [w.shape for w in weights] != shapes:
        raise ShapeError(f"Checkpoint shapes {[w.shape for w in weights]} != sidecar {shapes}")
    return cfg, weights
