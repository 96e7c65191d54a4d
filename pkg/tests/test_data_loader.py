"""
Unit tests for data_loader module.
"""

import pytest
import numpy as np
from pathlib import Path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.data_loader import (Dataset, DatasetDimensionError, DatasetParseError,
                             GraphDataLoader)
from src.dense_core import DenseMatrix
from src.partitioner import random_permutation, uniform_partition
from src.sparse_core import CsrMatrix


def write(path, text):
    path.write_text(text)
    return path


class TestGraphDataLoader:
    """Test suite for GraphDataLoader class."""

    def setup_method(self):
        """Setup test fixtures."""
        self.loader = GraphDataLoader(data_dir='.')

    def test_initialization(self):
        """Test loader initialization."""
        assert self.loader.data_dir == Path('.')
        assert self.loader.get_run_log().empty

    def test_matrix_market_pattern(self, tmp_path):
        """Test pattern entries become unit weights."""
        path = write(tmp_path / 'g.mtx', "%%MatrixMarket matrix coordinate pattern general\n"
                                         "% two edges\n3 3 2\n1 2\n2 3\n")
        graph = self.loader.load_graph(path)
        np.testing.assert_array_equal(graph.to_dense(), [[0, 1, 0], [0, 0, 1], [0, 0, 0]])

    def test_edge_list(self, tmp_path):
        """Test comments, optional weights and the default vertex count."""
        path = write(tmp_path / 'g.edges', "# toy\n0 1\n\n1 2 0.5  # weighted\n")
        graph = self.loader.load_graph(path)
        assert graph.shape == (3, 3)
        assert graph.to_dense()[1, 2] == 0.5

    def test_edge_list_line_numbers(self, tmp_path):
        """Test parse errors report the offending line."""
        path = write(tmp_path / 'bad.edges', "0 1\n1 x\n")
        with pytest.raises(DatasetParseError) as excinfo:
            self.loader.load_graph(path)
        assert excinfo.value.line == 2
        assert 'bad.edges:2' in str(excinfo.value)

    def test_edge_list_out_of_range(self, tmp_path):
        """Test vertex ids beyond n are rejected with their line."""
        path = write(tmp_path / 'g.edges', "0 1\n# c\n0 5\n")
        with pytest.raises(DatasetParseError) as excinfo:
            self.loader.load_graph(path, n=2)
        assert excinfo.value.line == 3

    def test_missing_file(self):
        """Test missing files raise FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            self.loader.load_graph('does/not/exist.mtx')

    def test_features_csv(self, tmp_path):
        """Test CSV features and non-numeric cells."""
        x = self.loader.load_features(write(tmp_path / 'x.csv', "1,2\n3,4\n"))
        np.testing.assert_array_equal(x.array, [[1, 2], [3, 4]])
        with pytest.raises(DatasetParseError) as excinfo:
            self.loader.load_features(write(tmp_path / 'bad.csv', "1,2\n3,abc\n"))
        assert excinfo.value.line == 2

    def test_labels(self, tmp_path):
        """Test label parsing and errors."""
        labels = self.loader.load_labels(write(tmp_path / 'y.labels', "0\n2\n1\n"))
        assert labels.tolist() == [0, 2, 1]
        with pytest.raises(DatasetParseError) as excinfo:
            self.loader.load_labels(write(tmp_path / 'bad.labels', "0\n1\nfoo\n"))
        assert excinfo.value.line == 3
        with pytest.raises(DatasetParseError):
            self.loader.load_labels(write(tmp_path / 'neg.labels', "-1\n"))

    def test_masks(self, tmp_path):
        """Test split masks and invalid rows."""
        masks = self.loader.load_masks(write(tmp_path / 'm.csv', "vertex,split\n0,train\n2,train\n1,test\n"), 3)
        assert masks['train'].tolist() == [True, False, True]
        assert masks['test'].tolist() == [False, True, False]
        with pytest.raises(DatasetParseError) as excinfo:
            self.loader.load_masks(write(tmp_path / 'bad.csv', "vertex,split\n0,train\n1,dev\n"), 3)
        assert excinfo.value.line == 3

    def test_load_dataset(self, tmp_path):
        """Test a complete dataset with an isolated last vertex."""
        write(tmp_path / 'g.edges', "0 1\n1 0\n")
        write(tmp_path / 'x.csv', "1,0\n0,1\n1,1\n")
        write(tmp_path / 'y.labels', "0\n1\n1\n")
        loader = GraphDataLoader(data_dir=tmp_path)
        ds = loader.load_dataset('g.edges', 'x.csv', 'y.labels', self_loops=True)
        assert ds.n == 3
        assert ds.name == 'g'
        assert ds.graph.to_dense()[2, 2] == 1.0
        assert 'Validated dataset' in loader.get_run_log()['action'].tolist()

    def test_dimension_mismatch(self, tmp_path):
        """Test disagreeing vertex counts."""
        write(tmp_path / 'g.edges', "0 1\n")
        write(tmp_path / 'x.csv', "1\n2\n")
        write(tmp_path / 'y.labels', "0\n1\n0\n")
        with pytest.raises(DatasetDimensionError):
            GraphDataLoader(tmp_path).load_dataset('g.edges', 'x.csv', 'y.labels')

    def test_save_and_reload(self, tmp_path):
        """Test a saved dataset loads back unchanged."""
        np.random.seed(42)
        graph = CsrMatrix.from_arrays(np.array([0, 1, 2, 3]), np.array([1, 2, 3, 0]), 5,
                                      weights=np.array([1.0, 2.0, 0.5, 1.0]))
        ds = Dataset(graph, DenseMatrix.from_array(np.random.randn(5, 2)), np.array([0, 1, 0, 1, 1]),
                     {'train': np.array([True, True, False, False, True])}, name='toy')
        paths = self.loader.save_dataset(ds, tmp_path / 'out')
        loaded = self.loader.load_dataset(paths['graph'], paths['features'], paths['labels'],
                                          paths['masks'])
        np.testing.assert_array_equal(loaded.graph.to_dense(), graph.to_dense())
        np.testing.assert_array_equal(loaded.features.array, ds.features.array)
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        np.testing.assert_array_equal(loaded.masks['train'], ds.masks['train'])

    def test_dataset_info(self):
        """Test summary statistics."""
        graph = CsrMatrix.from_arrays(np.array([0, 0, 1]), np.array([1, 2, 2]), 3)
        ds = Dataset(graph, DenseMatrix.zeros(3, 4), np.array([0, 2, 1]))
        info = self.loader.get_dataset_info(ds)
        assert (info['n'], info['m'], info['d0'], info['classes']) == (3, 3, 4, 3)
        assert info['k'] == pytest.approx(1.0)
        assert info['max_degree'] == 2
        assert info['memory_usage_mb'] > 0


class TestDataset:
    """Test suite for the Dataset record."""

    def setup_method(self):
        """Setup test fixtures."""
        np.random.seed(42)
        graph = CsrMatrix.from_arrays(np.array([0, 1, 2, 3, 4]), np.array([1, 2, 3, 4, 5]), 6)
        self.ds = Dataset(graph, DenseMatrix.from_array(np.arange(12.0).reshape(6, 2)),
                          np.arange(6) % 3, {'train': np.arange(6) < 3})

    def test_shape_checks(self):
        """Test the constructor rejects inconsistent parts."""
        with pytest.raises(DatasetDimensionError):
            Dataset(self.ds.graph, DenseMatrix.zeros(5, 2), self.ds.labels)
        with pytest.raises(DatasetDimensionError):
            Dataset(self.ds.graph, self.ds.features, self.ds.labels, {'val': np.ones(2, dtype=bool)})

    def test_permuted(self):
        """Test features, labels and masks follow their vertices."""
        perm = random_permutation(6, seed=3)
        moved = self.ds.permuted(perm)
        f = perm.forward
        np.testing.assert_array_equal(moved.features.array[f], self.ds.features.array)
        np.testing.assert_array_equal(moved.labels[f], self.ds.labels)
        np.testing.assert_array_equal(moved.masks['train'][f], self.ds.masks['train'])
        assert moved.graph.nnz == self.ds.graph.nnz

    def test_local_slice(self):
        """Test a worker's rows and dtype conversion."""
        x, y, mask = self.ds.local_slice(uniform_partition(6, 2), 1, dtype='f32')
        assert x.dtype == np.float32
        np.testing.assert_array_equal(x.array, self.ds.features.array[3:])
        assert y.tolist() == [0, 1, 2]
        assert not mask.any()

    def test_train_mask_default(self):
        """Test every vertex trains when no mask is given."""
        ds = Dataset(self.ds.graph, self.ds.features, self.ds.labels)
        assert ds.train_mask().all()
        assert ds.num_classes == 3


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
