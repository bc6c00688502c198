"""Singing-voice synthesis with a musical-note-position-aware attention.

A desk-scale, trainable sequence-to-sequence model that maps phoneme-level
musical-score features to frame-level acoustic features, built on a small
reverse-mode autodiff engine.  The attention combines a stay-or-advance
forward recursion with note-position-aware output and transition
probabilities, trained with a mora-band guided attention loss; log-F0 is
modeled as a residual from the attention-weighted note pitch.
"""

from .attention import AlignmentCollapseError, AttentionMode, attend, forward_step
from .autodiff import (
    GraphError,
    NonFiniteError,
    ParamSet,
    ShapeError,
    Tensor,
    finite_diff_check,
    gradients,
)
from .estimator import SingingSynthesizer
from .loss import LossReport, guided_attention_loss, penalty_matrix, total_loss
from .network import (
    CheckpointError,
    Model,
    ModelConfig,
    Trainer,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
)
from .score import Score, ScoreError, build_score, load_score, parse_score, save_score
from .synthdata import (
    CorpusSpec,
    GroundTruth,
    f0_rmse_cents,
    generate_corpus,
    load_corpus,
    monotonicity_rate,
    save_corpus,
    timing_error,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentCollapseError",
    "AttentionMode",
    "CheckpointError",
    "CorpusSpec",
    "GraphError",
    "GroundTruth",
    "LossReport",
    "Model",
    "ModelConfig",
    "NonFiniteError",
    "ParamSet",
    "Score",
    "ScoreError",
    "ShapeError",
    "SingingSynthesizer",
    "Tensor",
    "Trainer",
    "TrainingDiverged",
    "attend",
    "build_score",
    "f0_rmse_cents",
    "finite_diff_check",
    "forward_step",
    "generate_corpus",
    "gradients",
    "guided_attention_loss",
    "load_checkpoint",
    "load_corpus",
    "load_score",
    "monotonicity_rate",
    "parse_score",
    "penalty_matrix",
    "save_checkpoint",
    "save_corpus",
    "save_score",
    "timing_error",
    "total_loss",
]
