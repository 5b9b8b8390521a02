"""Fusion network over frozen vision/text embeddings: training, caching,
evaluation, and benchmarking."""

from .kernel import RngState
from .losses import LossWeights, TaskKind
from .model import AblationFlags, FusionConfig
from .optim import ScheduleConfig
from .store import EmbeddingRecord, SyntheticSpec
from .training import Metrics, ProbeConfig, TrainConfig

__all__ = [
    "AblationFlags",
    "EmbeddingRecord",
    "FusionConfig",
    "LossWeights",
    "Metrics",
    "ProbeConfig",
    "RngState",
    "ScheduleConfig",
    "SyntheticSpec",
    "TaskKind",
    "TrainConfig",
]

__version__ = "0.1.0"
