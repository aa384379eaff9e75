"""Deep clustering with geometric structure preservation.

The autoencoder and the learnable cluster centres are trained together:
a KL clustering loss and a centre ranking loss on mini-batches, then an
intra-cluster isometry loss and a centre alignment loss on the full
dataset, with loss weights ramped across epochs.
"""

from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .config import ABLATIONS, TrainConfig, schedule
from .dataio import Dataset, SplitSpec, gen_blobs, gen_intersecting_manifolds, load_csv, load_idx, split, zscore
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DCRLError,
    DimensionError,
    FormatError,
    InitializationError,
    MetricError,
    NumericalError,
    ParseError,
)
from .kernels import BACKEND
from .metrics import MetricsReport, evaluate_all
from .trainer import DCRL, fit

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "BACKEND",
    "CheckpointError",
    "ConfigError",
    "DCRL",
    "DCRLError",
    "DataError",
    "Dataset",
    "DimensionError",
    "FormatError",
    "InitializationError",
    "MetricError",
    "MetricsReport",
    "NumericalError",
    "ParseError",
    "SplitSpec",
    "TrainConfig",
    "evaluate_all",
    "fit",
    "gen_blobs",
    "gen_intersecting_manifolds",
    "load_checkpoint",
    "load_csv",
    "load_idx",
    "save_checkpoint",
    "schedule",
    "split",
    "zscore",
]
