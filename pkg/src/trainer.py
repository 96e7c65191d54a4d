"""
Training driver: permutation, partitioning, worker lifecycle and run reports.

The TrainingDriver owns the whole run. It optionally relabels the vertices,
splits the rows uniformly over P workers, tiles the normalised adjacency,
launches one GcnModel per worker on a DeviceGroup, collects per-epoch
metrics and turns the recorded timeline into a runtime breakdown.

Epoch time is measured on each worker from the start of a training step to
the completion of its optimizer update; the reported value is the maximum
over workers.

Typical usage example:
    cfg = load_config('configs/toy.json')
    driver = TrainingDriver(verbose=True)
    result = driver.train(cfg, dataset, P=4)
    for line in result.metrics_lines():
        print(line)
"""

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .collectives import Communicator, DeviceGroup
from .data_loader import Dataset
from .data_profiler import BreakdownReport, runtime_breakdown
from .dense_core import resolve_dtype
from .gcn_model import (ConfigError, GcnConfig, GcnModel, GraphPlans, LayerParams,
                        prepare_graph, save_checkpoint)
from .partitioner import (PartitionVector, Permutation, balance_stats, random_permutation,
                          uniform_partition)
from .synth_graph import synth_graph


__all__ = ['ConfigError', 'EpochRecord', 'TrainResult', 'TrainingDriver',
           'buffer_plan_bytes', 'load_config']


def load_config(path: Union[str, Path]) -> GcnConfig:
    """
    Read a run configuration JSON file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: On malformed JSON, unknown keys or invalid values
    """
    return GcnConfig.from_json(path)


def buffer_plan_bytes(cfg: GcnConfig, p: PartitionVector) -> int:
    """Bytes of the L + 3 buffer plan on the largest worker."""
    width = max(cfg.layer_dims)
    rows = p.max_part
    scalars = rows * width * 3 + sum(rows * d for d in cfg.layer_dims[1:])
    return scalars * resolve_dtype(cfg.dtype).itemsize


@dataclass
class EpochRecord:
    """Metrics of one full-batch step."""
    epoch: int
    loss: float
    accuracy: float
    wall_us: float

    def to_dict(self) -> Dict[str, Any]:
        return {'epoch': self.epoch, 'loss': self.loss,
                'accuracy': self.accuracy, 'wall_us': self.wall_us}


@dataclass
class TrainResult:
    """
    Outcome of a training run.

    Attributes:
        records: One EpochRecord per epoch
        breakdown: Runtime breakdown of the run (None without epochs)
        group: The DeviceGroup, holding the timeline and byte counters
        params: Final replicated weights (rank 0's copy)
        permutation: Vertex relabeling applied before partitioning
        weights_identical: W was bitwise identical on all workers after every step
        logits: Final logits in the original vertex order (when collected)
    """
    records: List[EpochRecord]
    breakdown: Optional[BreakdownReport]
    group: DeviceGroup
    params: List[LayerParams]
    permutation: Permutation
    weights_identical: bool
    logits: Optional[np.ndarray] = None
    balance: Dict[str, Any] = field(default_factory=dict)

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.records],
                            columns=['epoch', 'loss', 'accuracy', 'wall_us'])

    def metrics_lines(self) -> List[str]:
        """One JSON object per epoch: {epoch, loss, wall_us, accuracy}."""
        return [json.dumps(r.to_dict()) for r in self.records]


def _digest(params: Sequence[LayerParams]) -> str:
    h = hashlib.sha1()
    for p in params:
        h.update(p.W.data.tobytes())
    return h.hexdigest()


def _train_worker(comm: Communicator, cfg: GcnConfig, graph: GraphPlans, dataset: Dataset,
                  global_count: int, collect_logits: bool) -> Dict[str, Any]:
    x, y, mask = dataset.local_slice(graph.p, comm.rank, cfg.dtype)
    model = GcnModel(cfg, comm, graph, x, y, mask, global_count)
    losses, accs, walls, digests = [], [], [], []
    for _ in range(cfg.epochs):
        t0 = time.perf_counter_ns()
        loss = model.train_step()
        walls.append((time.perf_counter_ns() - t0) / 1000.0)
        losses.append(loss)
        accs.append(model.last_metrics['accuracy'])
        digests.append(_digest(model.params))
    logits = model.predict() if collect_logits else None
    return {'losses': losses, 'accuracy': accs, 'wall_us': walls, 'digests': digests,
            'params': model.params, 'logits': logits}


class TrainingDriver:
    """
    Run full-batch GCN training on a simulated device group.

    Attributes:
        verbose (bool): Echo logged actions
        memory_limit_bytes (Optional[int]): Per-worker budget for the buffer plan
        run_log (List[Dict[str, str]]): Recorded actions

    Example:
        >>> driver = TrainingDriver()
        >>> result = driver.train(GcnConfig(layer_dims=[16, 16, 4]), dataset, P=2)
        >>> result.losses[-1] < result.losses[0]
        True
    """

    def __init__(self, verbose: bool = False, memory_limit_bytes: Optional[int] = None):
        self.verbose = verbose
        self.memory_limit_bytes = memory_limit_bytes
        self.run_log: List[Dict[str, str]] = []

    def log_action(self, action: str, details: str):
        """Log driver actions."""
        self.run_log.append({'action': action, 'details': details})
        if self.verbose:
            print(f"✓ {action}: {details}")

    def get_run_log(self) -> pd.DataFrame:
        return pd.DataFrame(self.run_log, columns=['action', 'details'])

    def prepare(self, cfg: GcnConfig, dataset: Dataset, P: int):
        """
        Permute (optionally), partition and tile a dataset for P workers.

        Returns:
            Tuple of (dataset in worker order, permutation, GraphPlans)

        Raises:
            ConfigError: If the config does not match the dataset
            MemoryError: If the buffer plan exceeds memory_limit_bytes
        """
        if P < 1:
            raise ValueError(f"Need at least one worker, got P={P}")
        if cfg.layer_dims[0] != dataset.features.cols:
            raise ConfigError(f"layer_dims[0]={cfg.layer_dims[0]} but the dataset has "
                              f"{dataset.features.cols} features")
        if dataset.num_classes > cfg.layer_dims[-1]:
            raise ConfigError(f"layer_dims[-1]={cfg.layer_dims[-1]} is smaller than the "
                              f"{dataset.num_classes} label classes")

        if cfg.permute:
            perm = random_permutation(dataset.n, cfg.seed)
            dataset = dataset.permuted(perm)
            self.log_action('Permuted vertices', f'seed={cfg.seed}')
        else:
            perm = Permutation.identity(dataset.n)

        p = uniform_partition(dataset.n, P)
        need = buffer_plan_bytes(cfg, p)
        if self.memory_limit_bytes is not None and need > self.memory_limit_bytes:
            raise MemoryError(f"Buffer plan needs {need} bytes per worker, "
                              f"limit is {self.memory_limit_bytes}")
        graph = prepare_graph(dataset.graph, p, cfg.dtype)
        report = balance_stats(graph.forward)
        self.log_action('Partitioned rows', f'P={P}, max part {p.max_part} rows, '
                                            f'overall nnz ratio {report.overall_ratio:.3f}')
        return dataset, perm, graph

    def train(self, cfg: Union[GcnConfig, str, Path], dataset: Dataset, P: int,
              link_delay_ns_per_byte: Optional[float] = None, collect_logits: bool = False,
              checkpoint: Optional[Union[str, Path]] = None) -> TrainResult:
        """
        Train for cfg.epochs full-batch steps on P workers.

        Args:
            cfg: GcnConfig or path to a config JSON
            dataset: Dataset in original vertex order
            P: Number of workers
            link_delay_ns_per_byte: Injected transfer cost of every collective
            collect_logits: Run a final forward pass and return logits in
                original vertex order
            checkpoint: Write the final weights here (MGDM + JSON sidecar)

        Returns:
            TrainResult with per-epoch metrics, breakdown and timeline

        Raises:
            ConfigError: On invalid configuration
            MemoryError: If the buffer plan exceeds the memory limit
            Exception: The first worker failure, re-raised after all workers stop
        """
        if not isinstance(cfg, GcnConfig):
            cfg = load_config(cfg)
        work_ds, perm, graph = self.prepare(cfg, dataset, P)
        group = DeviceGroup(P, link_delay_ns_per_byte)
        global_count = int(np.asarray(work_ds.train_mask()).sum())
        self.log_action('Launched workers', f'P={P}, epochs={cfg.epochs}, dims={cfg.layer_dims}')

        results = group.launch(_train_worker, cfg, graph, work_ds, global_count, collect_logits)

        first = results[0]
        walls = np.max(np.array([r['wall_us'] for r in results]), axis=0) if cfg.epochs else []
        records = [EpochRecord(e, first['losses'][e], first['accuracy'][e], float(walls[e]))
                   for e in range(cfg.epochs)]
        identical = all(r['digests'] == first['digests'] for r in results[1:])

        logits = None
        if collect_logits:
            stacked = np.concatenate([r['logits'] for r in results], axis=0)
            logits = stacked[perm.forward]

        events = group.timeline.events()
        breakdown = runtime_breakdown(events) if events else None
        if records:
            self.log_action('Finished training', f'loss {records[0].loss:.6f} -> {records[-1].loss:.6f}')
        if checkpoint is not None:
            save_checkpoint(checkpoint, first['params'], cfg)
            self.log_action('Saved checkpoint', str(checkpoint))
        return TrainResult(records, breakdown, group, first['params'], perm, identical, logits,
                           balance=balance_stats(graph.forward).to_dict())

    def runtime_breakdown(self, cfg: GcnConfig, dataset: Dataset, P: int) -> BreakdownReport:
        """
        Train and aggregate the recorded events by kernel.

        Raises:
            NoEventsError: If the run recorded nothing (e.g. zero epochs)
        """
        if not isinstance(cfg, GcnConfig):
            cfg = load_config(cfg)
        result = self.train(cfg, dataset, P)
        return runtime_breakdown(result.group.timeline.events())

    def density_study(self, n: int, degrees: Sequence[float], worker_counts: Sequence[int],
                      hidden: int = 16, num_classes: int = 4, feature_dim: int = 16,
                      epochs: int = 3, exponent: float = 0.5, seed: int = 0,
                      progress: Optional[Callable[[Dict[str, Any]], None]] = None) -> pd.DataFrame:
        """
        Epoch time versus average degree for several worker counts.

        The first epoch of every run is treated as warm-up when epochs > 1.
        Speedup is relative to the smallest worker count at the same degree.

        Returns:
            DataFrame with columns degree, workers, epoch_us, spmm_fraction, speedup
        """
        rows = []
        for k in degrees:
            ds = synth_graph(n, k, exponent, seed, feature_dim=feature_dim, num_classes=num_classes)
            cfg = GcnConfig(layer_dims=[feature_dim, hidden, num_classes], epochs=epochs, seed=seed)
            for P in worker_counts:
                result = self.train(cfg, ds, P)
                walls = [r.wall_us for r in result.records]
                timed = walls[1:] if len(walls) > 1 else walls
                row = {'degree': k, 'workers': P, 'epoch_us': float(np.mean(timed)),
                       'spmm_fraction': result.breakdown.fractions['spmm']}
                rows.append(row)
                if progress is not None:
                    progress(row)
        frame = pd.DataFrame(rows, columns=['degree', 'workers', 'epoch_us', 'spmm_fraction'])
        base = frame.loc[frame.groupby('degree')['workers'].idxmin()].set_index('degree')['epoch_us']
        frame['speedup'] = frame['degree'].map(base) / frame['epoch_us']
        self.log_action('Density study', f'{len(degrees)} degrees x {len(worker_counts)} worker counts')
        return frame
