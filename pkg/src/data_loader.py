"""
Data loading utilities for graph training datasets.

This module provides the Dataset record (adjacency, features, labels and
optional train/val/test masks) and the GraphDataLoader class that reads it
from disk. Graphs are accepted as Matrix Market files or whitespace-separated
edge lists, features as MGDM binary matrices or CSV, labels as one integer
per line and masks as a two-column CSV (vertex, split).

Typical usage example:
    loader = GraphDataLoader(data_dir='data')
    ds = loader.load_dataset('graph.mtx', 'features.mgdm', 'labels.txt')
    info = loader.get_dataset_info(ds)
    print(f"Loaded {info['n']} vertices and {info['m']} edges")

Author: MGGCN maintainers
Date: October 2026
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import scipy.io
import scipy.sparse as sp

from .dense_core import DenseMatrix, read_dense, resolve_dtype, write_dense
from .partitioner import PartitionVector, Permutation, apply_permutation
from .sparse_core import CsrMatrix, add_self_loops


SPLITS = ('train', 'val', 'test')

PathLike = Union[str, Path]


class DatasetParseError(ValueError):
    """A dataset file could not be parsed; carries the file and 1-based line."""

    def __init__(self, path: PathLike, line: Optional[int], reason: str):
        self.path = Path(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else str(self.path)
        super().__init__(f"{where}: {reason}")


class DatasetDimensionError(ValueError):
    """Graph, features and labels disagree on the number of vertices."""


@dataclass
class Dataset:
    """
    Graph learning dataset.

    Attributes:
        graph (CsrMatrix): Raw adjacency A (n x n), entry (u, v) is edge u -> v
        features (DenseMatrix): n x d(0) input features
        labels (np.ndarray): Class index per vertex
        masks (Dict[str, np.ndarray]): Optional boolean vertex masks by split
        name (str): Dataset name used in reports
    """
    graph: CsrMatrix
    features: DenseMatrix
    labels: np.ndarray
    masks: Dict[str, np.ndarray] = field(default_factory=dict)
    name: str = 'dataset'

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.graph.rows
        if self.graph.cols != n:
            raise DatasetDimensionError(f"Adjacency must be square, got {self.graph.shape}")
        if self.features.rows != n:
            raise DatasetDimensionError(
                f"features have {self.features.rows} rows but the graph has {n} vertices")
        if self.labels.shape[0] != n:
            raise DatasetDimensionError(
                f"labels have {self.labels.shape[0]} entries but the graph has {n} vertices")
        for split, mask in self.masks.items():
            if np.asarray(mask).shape[0] != n:
                raise DatasetDimensionError(
                    f"{split} mask has {np.asarray(mask).shape[0]} entries but the graph has {n} vertices")

    @property
    def n(self) -> int:
        return self.graph.rows

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def train_mask(self) -> np.ndarray:
        """Training vertices; every vertex when no train mask is given."""
        return self.masks.get('train', np.ones(self.n, dtype=bool))

    def permuted(self, perm: Permutation) -> 'Dataset':
        """Relabel vertices symmetrically; features, labels and masks move along."""
        graph, features, labels = apply_permutation(self.graph, self.features, self.labels, perm)
        masks = {k: perm.permute_rows(np.asarray(v, dtype=bool)) for k, v in self.masks.items()}
        return Dataset(graph, features, labels, masks, self.name)

    def local_slice(self, p: PartitionVector, rank: int, dtype='f64'):
        """
        Rows owned by one worker: (features, labels, train mask).

        Features are copied into a fresh matrix of the requested scalar type.
        """
        r0, r1 = p.part_range(rank)
        x = DenseMatrix.from_array(self.features.array[r0:r1], dtype=resolve_dtype(dtype))
        return x, self.labels[r0:r1], np.asarray(self.train_mask()[r0:r1], dtype=bool)


class GraphDataLoader:
    """
    Load, validate and save graph datasets.

    Relative paths are resolved against `data_dir`. Every load is recorded in
    an action log that can be exported as a DataFrame.

    Attributes:
        data_dir (Path): Directory the relative paths are resolved against
        dtype (str): Scalar type of the loaded features and edge weights
        verbose (bool): Echo logged actions

    Example:
        >>> loader = GraphDataLoader(data_dir='data')
        >>> ds = loader.load_dataset('toy.edges', 'toy.csv', 'toy.labels')
        >>> loader.get_dataset_info(ds)['n']
        2
    """

    def __init__(self, data_dir: PathLike = '.', dtype: str = 'f64', verbose: bool = False):
        self.data_dir = Path(data_dir)
        self.dtype = dtype
        self.verbose = verbose
        self.run_log: List[Dict[str, str]] = []

    def log_action(self, action: str, details: str):
        """Log loader actions."""
        self.run_log.append({'action': action, 'details': details})
        if self.verbose:
            print(f"✓ {action}: {details}")

    def get_run_log(self) -> pd.DataFrame:
        return pd.DataFrame(self.run_log, columns=['action', 'details'])

    def _resolve(self, path: PathLike) -> Path:
        path = Path(path)
        if not path.is_absolute():
            path = self.data_dir / path
        if not path.exists():
            raise FileNotFoundError(f"Data file not found: {path}")
        return path

    # -- graph -------------------------------------------------------------

    def load_graph(self, path: PathLike, n: Optional[int] = None) -> CsrMatrix:
        """
        Load an adjacency matrix from Matrix Market (.mtx) or an edge list.

        Matrix Market "pattern" entries get weight 1.0 and symmetric files are
        expanded to both triangles by scipy. Edge lists hold `src dst [weight]`
        per line; '#' starts a comment.

        Args:
            path: Graph file
            n: Vertex count for edge lists (default: largest id + 1)

        Raises:
            FileNotFoundError: If the file is missing
            DatasetParseError: With the offending line number
        """
        path = self._resolve(path)
        if path.suffix.lower() == '.mtx':
            graph = self._load_matrix_market(path)
        else:
            graph = self._load_edge_list(path, n)
        self.log_action('Loaded graph', f'{path.name}: {graph.rows} vertices, {graph.nnz} edges')
        return graph

    def _load_matrix_market(self, path: Path) -> CsrMatrix:
        try:
            m = scipy.io.mmread(str(path))
        except (ValueError, IndexError, OverflowError) as exc:
            raise DatasetParseError(path, _first_bad_mm_line(path), str(exc)) from exc
        if not sp.issparse(m):
            m = sp.coo_matrix(m)
        if m.shape[0] != m.shape[1]:
            raise DatasetDimensionError(f"{path}: adjacency must be square, got {m.shape}")
        return CsrMatrix.from_scipy(m, dtype=self.dtype)

    def _load_edge_list(self, path: Path, n: Optional[int]) -> CsrMatrix:
        rows = []
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                text = raw.split('#', 1)[0].strip()
                if not text:
                    continue
                parts = text.split()
                if len(parts) not in (2, 3):
                    raise DatasetParseError(path, lineno, f"expected 'src dst [weight]', got {raw.strip()!r}")
                try:
                    src, dst = int(parts[0]), int(parts[1])
                    weight = float(parts[2]) if len(parts) == 3 else 1.0
                except ValueError:
                    raise DatasetParseError(path, lineno, f"non-numeric edge {raw.strip()!r}") from None
                if src < 0 or dst < 0:
                    raise DatasetParseError(path, lineno, f"negative vertex id in {raw.strip()!r}")
                rows.append((src, dst, weight, lineno))
        edges = pd.DataFrame(rows, columns=['src', 'dst', 'weight', 'line'])
        size = n if n is not None else (int(edges[['src', 'dst']].max().max()) + 1 if len(edges) else 0)
        outside = edges[(edges['src'] >= size) | (edges['dst'] >= size)]
        if len(outside):
            bad = outside.iloc[0]
            raise DatasetParseError(path, int(bad['line']), f"vertex id outside [0, {size})")
        return CsrMatrix.from_arrays(edges['src'].to_numpy(), edges['dst'].to_numpy(), size,
                                     edges['weight'].to_numpy(), dtype=self.dtype)

    # -- features, labels, masks -------------------------------------------

    def load_features(self, path: PathLike) -> DenseMatrix:
        """Dense features from MGDM (.mgdm/.bin) or CSV (one row per vertex, no header)."""
        path = self._resolve(path)
        if path.suffix.lower() in ('.mgdm', '.bin'):
            try:
                x = read_dense(path)
            except ValueError as exc:
                raise DatasetParseError(path, None, str(exc)) from exc
            x = DenseMatrix.from_array(x.array, dtype=resolve_dtype(self.dtype))
        else:
            try:
                frame = pd.read_csv(path, header=None, comment='#')
            except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
                raise DatasetParseError(path, _parser_line(exc), str(exc)) from exc
            bad = frame.apply(pd.to_numeric, errors='coerce').isna().any(axis=1)
            if bad.any():
                raise DatasetParseError(path, int(np.flatnonzero(bad.to_numpy())[0]) + 1,
                                        "non-numeric feature value")
            x = DenseMatrix.from_array(frame.to_numpy(dtype=np.float64), dtype=resolve_dtype(self.dtype))
        self.log_action('Loaded features', f'{path.name}: {x.rows} x {x.cols}')
        return x

    def load_labels(self, path: PathLike) -> np.ndarray:
        """One non-negative integer class per line."""
        path = self._resolve(path)
        labels = []
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                text = raw.strip()
                if not text:
                    continue
                try:
                    value = int(text)
                except ValueError:
                    raise DatasetParseError(path, lineno, f"label {text!r} is not an integer") from None
                if value < 0:
                    raise DatasetParseError(path, lineno, f"negative label {value}")
                labels.append(value)
        labels = np.asarray(labels, dtype=np.int64)
        self.log_action('Loaded labels', f'{path.name}: {labels.size} labels, '
                                         f'{len(np.unique(labels))} classes')
        return labels

    def load_masks(self, path: PathLike, n: int) -> Dict[str, np.ndarray]:
        """CSV with columns vertex,split (split in train/val/test) -> boolean masks."""
        path = self._resolve(path)
        frame = pd.read_csv(path)
        missing = {'vertex', 'split'} - set(frame.columns)
        if missing:
            raise DatasetParseError(path, 1, f"missing columns {sorted(missing)}")
        bad = ~frame['split'].isin(SPLITS) | (frame['vertex'] < 0) | (frame['vertex'] >= n)
        if bad.any():
            # +2: header line and 1-based numbering
            raise DatasetParseError(path, int(np.flatnonzero(bad.to_numpy())[0]) + 2,
                                    f"invalid split or vertex id outside [0, {n})")
        masks = {}
        for split, group in frame.groupby('split'):
            mask = np.zeros(n, dtype=bool)
            mask[group['vertex'].to_numpy(dtype=np.int64)] = True
            masks[split] = mask
        self.log_action('Loaded masks', ', '.join(f'{k}={int(v.sum())}' for k, v in masks.items()))
        return masks

    # -- dataset -----------------------------------------------------------

    def load_dataset(self, graph_path: PathLike, features_path: PathLike, labels_path: PathLike,
                     masks_path: Optional[PathLike] = None, name: Optional[str] = None,
                     self_loops: bool = False) -> Dataset:
        """
        Load and validate a complete dataset.

        Args:
            graph_path: Matrix Market or edge-list file
            features_path: MGDM or CSV features
            labels_path: One integer label per line
            masks_path: Optional vertex,split CSV
            name: Dataset name (default: graph file stem)
            self_loops: Add A + I before training

        Returns:
            Validated Dataset

        Raises:
            FileNotFoundError: If a file is missing
            DatasetParseError: If a file is malformed
            DatasetDimensionError: If the vertex counts disagree
        """
        features = self.load_features(features_path)
        labels = self.load_labels(labels_path)
        is_mtx = Path(graph_path).suffix.lower() == '.mtx'
        graph = self.load_graph(graph_path, n=None if is_mtx else features.rows)
        if self_loops:
            graph = add_self_loops(graph)
            self.log_action('Added self loops', f'{graph.rows} diagonal entries')
        masks = self.load_masks(masks_path, graph.rows) if masks_path is not None else {}
        ds = Dataset(graph, features, labels, masks, name or Path(graph_path).stem)
        self.validate_dataset(ds)
        return ds

    def validate_dataset(self, ds: Dataset) -> bool:
        """
        Check value-level consistency beyond the constructor's shape checks.

        Raises:
            DatasetDimensionError: On non-finite features or negative labels
        """
        if not np.all(np.isfinite(ds.features.data)):
            raise DatasetDimensionError("features contain NaN or infinite values")
        if ds.labels.size and ds.labels.min() < 0:
            raise DatasetDimensionError("labels must be non-negative class indices")
        self.log_action('Validated dataset', f'{ds.name}: n={ds.n}, m={ds.graph.nnz}')
        return True

    def get_dataset_info(self, ds: Dataset) -> Dict:
        """
        Summary statistics of a dataset.

        Returns:
            Dictionary containing:
                - name, n (vertices), m (stored edges), d0 (feature width)
                - classes: Number of label classes
                - k: Average degree m / n
                - max_degree: Largest out-degree
                - masks: Vertex count per split
                - memory_usage_mb: CSR plus feature footprint
        """
        degrees = ds.graph.out_degrees()
        csr_bytes = ds.graph.row_ptr.nbytes + ds.graph.col_idx.nbytes + ds.graph.values.nbytes
        return {
            'name': ds.name,
            'n': ds.n,
            'm': ds.graph.nnz,
            'd0': ds.features.cols,
            'classes': ds.num_classes,
            'k': ds.graph.nnz / ds.n if ds.n else 0.0,
            'max_degree': int(degrees.max()) if degrees.size else 0,
            'masks': {k: int(np.asarray(v).sum()) for k, v in ds.masks.items()},
            'memory_usage_mb': (csr_bytes + ds.features.nbytes) / 1024**2,
        }

    def save_dataset(self, ds: Dataset, out_dir: PathLike, stem: Optional[str] = None) -> Dict[str, Path]:
        """
        Write a dataset as edge list, MGDM features, labels and (if any) masks.

        Returns:
            Mapping from artifact kind to the written path
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or ds.name
        paths = {
            'graph': out_dir / f'{stem}.edges',
            'features': out_dir / f'{stem}.mgdm',
            'labels': out_dir / f'{stem}.labels',
        }
        coo = ds.graph.to_scipy().tocoo()
        edges = pd.DataFrame({'src': coo.row, 'dst': coo.col, 'weight': coo.data})
        with open(paths['graph'], 'w') as fh:
            fh.write(f'# {ds.name}: n={ds.n} m={ds.graph.nnz}\n')
            edges.to_csv(fh, sep=' ', header=False, index=False)
        write_dense(paths['features'], ds.features)
        pd.Series(ds.labels).to_csv(paths['labels'], header=False, index=False)
        if ds.masks:
            paths['masks'] = out_dir / f'{stem}.masks.csv'
            frame = pd.concat([pd.DataFrame({'vertex': np.flatnonzero(m), 'split': split})
                               for split, m in ds.masks.items()], ignore_index=True)
            frame.to_csv(paths['masks'], index=False)
        self.log_action('Saved dataset', f'{ds.name} -> {out_dir}')
        return paths


def _first_bad_mm_line(path: Path) -> Optional[int]:
    """Locate the first malformed line of a Matrix Market file."""
    seen_size = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if lineno == 1:
                if not text.startswith('%%MatrixMarket'):
                    return 1
                continue
            if not text or text.startswith('%'):
                continue
            parts = text.split()
            if not seen_size:
                seen_size = True
                if len(parts) != 3 or not all(p.isdigit() for p in parts):
                    return lineno
                continue
            try:
                [float(p) for p in parts]
            except ValueError:
                return lineno
            if len(parts) < 2:
                return lineno
    return None


def _parser_line(exc: Exception) -> Optional[int]:
    text = str(exc)
    marker = 'line '
    if marker in text:
        digits = ''.join(ch for ch in text.split(marker, 1)[1] if ch.isdigit() or ch == ',').split(',')[0]
        return int(digits) if digits else None
    return None
