"""
Multi-device full-batch GCN training package.
Staged-broadcast SpMM, L+3 buffer plan and communication/computation overlap.
"""

__version__ = "1.0.0"

from . import dense_core
from . import sparse_core
from . import partitioner
from . import collectives
from . import dist_spmm
from . import gcn_model
from . import data_loader
from . import synth_graph
from . import cost_model
from . import data_profiler
from . import trainer
from . import visualization

__all__ = [
    'dense_core',
    'sparse_core',
    'partitioner',
    'collectives',
    'dist_spmm',
    'gcn_model',
    'data_loader',
    'synth_graph',
    'cost_model',
    'data_profiler',
    'trainer',
    'visualization'
]
