"""Semi-supervised multi-label classification of support needs in questions."""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .data import AnswerRecord, Dataset, DatasetKind, Sample, fuse, split_kfold
from .metrics import MetricsReport

__all__ = [
    "AnswerRecord",
    "Dataset",
    "DatasetKind",
    "MetricsReport",
    "RunConfig",
    "Sample",
    "fuse",
    "load_config",
    "split_kfold",
    "__version__",
]
