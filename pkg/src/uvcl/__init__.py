"""Unsupervised continual clustering of feature-vector task streams.

Kernel-density mode seeking discovers clusters, a per-cluster replay
memory carries exemplars across tasks, and an optional linear softmax head
flags novel inputs by low confidence.
"""
from .engine import ContinualLearner, EngineConfig, RunReport, TaskReport, run_stream
from .errors import ConfigError, DataError, IsolatedSeedError, NumericalError, UVCLError
from .head import LinearHead, TrainConfig
from .ingest import SyntheticSpec, TaskBatch, generate_synthetic_stream, generate_test_set
from .kde import MeanShiftConfig, Mode, find_modes, kde_density
from .metrics import acacc, bwf, cluster_accuracy, fwf, hungarian
from .registry import Registry

__version__ = "0.1.0"

__all__ = [
    "ContinualLearner", "EngineConfig", "RunReport", "TaskReport", "run_stream",
    "ConfigError", "DataError", "IsolatedSeedError", "NumericalError", "UVCLError",
    "LinearHead", "TrainConfig",
    "SyntheticSpec", "TaskBatch", "generate_synthetic_stream", "generate_test_set",
    "MeanShiftConfig", "Mode", "find_modes", "kde_density",
    "acacc", "bwf", "cluster_accuracy", "fwf", "hungarian",
    "Registry",
]
