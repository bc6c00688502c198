"""Scikit-learn style facade: fit on (scores, frame targets), predict frames.

Thin wrapper tying the model, trainer, and mode table together behind the
usual estimator conventions: constructor parameters stored verbatim,
fitted state on trailing-underscore attributes, get_params/set_params via
BaseEstimator.  X is a sequence of Score objects and y the matching
acoustic frame matrices.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cli import MODES
from .loss import feature_loss
from .network import Model, Trainer
from .score import Score
from .synthdata import GroundTruth


def _check_songs(x, y, acoustic_dim: int, caller: str):
    if len(x) == 0:
        raise ValueError(f"{caller}: need at least one song")
    if len(x) != len(y):
        raise ValueError(f"{caller}: {len(x)} scores but {len(y)} targets")
    out = []
    for i, (score, frames) in enumerate(zip(x, y)):
        if not isinstance(score, Score):
            raise TypeError(f"{caller}: X[{i}] is {type(score).__name__}, "
                            "expected Score")
        frames = np.asarray(frames, dtype=np.float64)
        want = (score.total_frames, acoustic_dim)
        if frames.shape != want:
            raise ValueError(f"{caller}: y[{i}] dims {frames.shape} != {want}")
        if not np.isfinite(frames).all():
            raise ValueError(f"{caller}: y[{i}] has non-finite values")
        out.append(frames)
    return list(x), out


def _check_alignments(x, alignments, caller: str):
    if alignments is None:
        return None
    if len(alignments) != len(x):
        raise ValueError(f"{caller}: {len(alignments)} alignments for "
                         f"{len(x)} scores")
    out = []
    for i, (score, a) in enumerate(zip(x, alignments)):
        a = np.asarray(a, dtype=np.int64)
        if a.shape != (score.total_frames,):
            raise ValueError(f"{caller}: alignments[{i}] must hold one entry "
                             "index per frame")
        out.append(a)
    return out


class SingingSynthesizer(BaseEstimator):
    """Sequence-to-sequence singing synthesizer as an sklearn estimator.

    Parameters mirror the CLI: `mode` picks one of the named systems, the
    rest are training and size knobs.  `noatt` needs frame-level
    alignments passed to both fit and predict.
    """

    def __init__(self, mode: str = "prop", steps: int = 500, lr: float = 1e-3,
                 clip_norm: float = 1.0, batch: int = 1,
                 guided_weight: float = 10.0, acoustic_dim: int = 8,
                 encoder_dim: int = 64, query_dim: int = 64,
                 reduction_factor: int = 3, seed: int = 0):
        self.mode = mode
        self.steps = steps
        self.lr = lr
        self.clip_norm = clip_norm
        self.batch = batch
        self.guided_weight = guided_weight
        self.acoustic_dim = acoustic_dim
        self.encoder_dim = encoder_dim
        self.query_dim = query_dim
        self.reduction_factor = reduction_factor
        self.seed = seed

    def _model_config(self):
        from .attention import AttentionMode
        from .network import ModelConfig
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; "
                             f"choose from {'|'.join(MODES)}")
        t = MODES[self.mode]
        return ModelConfig(
            acoustic_dim=self.acoustic_dim, encoder_dim=self.encoder_dim,
            query_dim=self.query_dim,
            reduction_factor=self.reduction_factor,
            mode=AttentionMode(t.use_position, t.transition),
            use_aux=t.use_aux, use_attention=not t.oracle_alignment,
            guided_weight=self.guided_weight if t.use_guided else 0.0,
            seed=self.seed)

    def fit(self, X, y, alignments=None):
        """Train on scores X and frame targets y; returns self.

        alignments (frame-level entry indices per song) are required for
        the oracle-alignment mode and ignored as training input otherwise.
        """
        scores, frames = _check_songs(X, y, self.acoustic_dim, "fit")
        aligns = _check_alignments(scores, alignments, "fit")
        cfg = self._model_config()
        if not cfg.use_attention and aligns is None:
            raise ValueError("fit: mode 'noatt' needs alignments")
        corpus = []
        for i, (score, target) in enumerate(zip(scores, frames)):
            a = aligns[i] if aligns is not None else \
                np.zeros(score.total_frames, dtype=np.int64)
            corpus.append((score, GroundTruth(a, target)))
        model = Model(cfg)
        trainer = Trainer(model, corpus, lr=self.lr, clip_norm=self.clip_norm,
                          batch=self.batch)
        trainer.run(self.steps)
        self.model_ = model
        self.config_ = cfg
        self.loss_log_ = list(trainer.log)
        self.n_songs_ = len(corpus)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this SingingSynthesizer is not fitted yet; call fit first")

    def predict(self, X, alignments=None):
        """Synthesized frames (logF0 channel absolute) for each score."""
        self._require_fitted()
        if len(X) == 0:
            raise ValueError("predict: need at least one song")
        aligns = _check_alignments(X, alignments, "predict")
        if not self.config_.use_attention and aligns is None:
            raise ValueError("predict: mode 'noatt' needs alignments")
        out = []
        for i, score in enumerate(X):
            if not isinstance(score, Score):
                raise TypeError(f"predict: X[{i}] is {type(score).__name__}, "
                                "expected Score")
            oracle = aligns[i] if aligns is not None else None
            out.append(self.model_.synthesize(score,
                                              oracle_alignment=oracle).frames)
        return out

    def predict_alignment(self, X, alignments=None):
        """Alignment matrices (entries x decoder steps) for each score."""
        self._require_fitted()
        aligns = _check_alignments(X, alignments, "predict_alignment")
        out = []
        for i, score in enumerate(X):
            oracle = aligns[i] if aligns is not None else None
            out.append(self.model_.synthesize(score,
                                              oracle_alignment=oracle).alignment)
        return out

    def score(self, X, y, alignments=None):
        """Negative mean feature loss of the residual-domain predictions."""
        self._require_fitted()
        scores, frames = _check_songs(X, y, self.acoustic_dim, "score")
        aligns = _check_alignments(scores, alignments, "score")
        losses = []
        for i, (s, target) in enumerate(zip(scores, frames)):
            oracle = aligns[i] if aligns is not None else None
            syn = self.model_.synthesize(s, oracle_alignment=oracle)
            losses.append(feature_loss(target, syn.raw_frames))
        return -float(np.mean(losses))
