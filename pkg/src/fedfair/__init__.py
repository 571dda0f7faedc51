"""Non-IID client splits, a small federated learning simulator and
per-user improvement (QoI) metrics for personalized federated learning."""

from .datasplit import PartitionManifest, SplitSpec, Strategy, split
from .dataset import Dataset, load_idx, synth_blobs
from .fedsim import FedConfig, Method, run_suite
from .metrics import MetricsReport, qoi, report
from .nnet import MlpArch, ModelParams, TrainingConfig
from .table import AccuracyTable, read_table

__version__ = "0.1.0"

__all__ = [
    "AccuracyTable", "Dataset", "FedConfig", "Method", "MetricsReport", "MlpArch", "ModelParams",
    "PartitionManifest", "SplitSpec", "Strategy", "TrainingConfig", "load_idx", "qoi", "read_table",
    "report", "run_suite", "split", "synth_blobs",
]
