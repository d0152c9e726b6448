"""Seeded attractor-injected model copies and cross-copy attack replication measurements."""

from .attacks import AttackConfig, AttackOutcome, attack_dispatch, run_attack
from .attractors import (
    PiecedModel,
    QimDecoder,
    SpreadSpectrumDecoder,
    gen_qim,
    gen_spread_spectrum,
    piece_together,
)
from .config import ExperimentConfig, load_config
from .evaluation import EnsembleModel, boundary_map, collusion_attack, gradient_cosine, replicate
from .kernels import BACKEND
from .numerics import LabeledSample, Layer, Model
from .training import Dataset, TrainConfig, evaluate_accuracy, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackOutcome", "BACKEND", "Dataset", "EnsembleModel", "ExperimentConfig",
    "LabeledSample", "Layer", "Model", "PiecedModel", "QimDecoder", "SpreadSpectrumDecoder",
    "TrainConfig", "attack_dispatch", "boundary_map", "collusion_attack", "evaluate_accuracy",
    "gen_qim", "gen_spread_spectrum", "gradient_cosine", "load_config", "piece_together",
    "replicate", "run_attack", "train",
]
