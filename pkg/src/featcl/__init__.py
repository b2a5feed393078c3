"""Rehearsal-free class-incremental learning on precomputed feature vectors."""

from .data import FeatureDataset, SequenceManifest, SyntheticSpec, generate_synthetic
from .losses import CategoryStats, LossBreakdown, LossMode
from .metrics import MetricsReport, evaluate, forgetting_summary, logit_variance
from .model import MultiHeadModel, expand_network, predict_without_softmax
from .nnmath import ActivationSpec, InitSpec
from .training import SequenceState, TrainConfig, run_curriculum, train_sequence

__all__ = [
    "ActivationSpec",
    "CategoryStats",
    "FeatureDataset",
    "InitSpec",
    "LossBreakdown",
    "LossMode",
    "MetricsReport",
    "MultiHeadModel",
    "SequenceManifest",
    "SequenceState",
    "SyntheticSpec",
    "TrainConfig",
    "evaluate",
    "expand_network",
    "forgetting_summary",
    "generate_synthetic",
    "logit_variance",
    "predict_without_softmax",
    "run_curriculum",
    "train_sequence",
]

__version__ = "0.1.0"
