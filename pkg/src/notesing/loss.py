"""Training losses: mora-band penalty matrix, guided attention, features.

The penalty matrix gives every phoneme entry a zero-cost band equal to its
(pseudo) mora's frame band, translated 15 frames earlier to absorb vocal
timing deviation, with a linear ramp to 1 over 60 frames outside the band.
Alignment mass falling on penalized cells is charged with an L1 mean; the
total objective adds decoder and postnet feature losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .score import Score, flatten, mora_boundaries

DEFAULT_DECAY_FRAMES = 60
DEFAULT_SHIFT_FRAMES = 15
DEFAULT_GUIDED_WEIGHT = 10.0


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class PenaltyMatrix:
    """Soft penalty G over (entry, decoder step) cells, values in [0, 1]."""

    G: np.ndarray
    decay_frames: int = DEFAULT_DECAY_FRAMES
    shift_frames: int = DEFAULT_SHIFT_FRAMES

    def __post_init__(self):
        if self.G.ndim != 2:
            raise LossError(f"penalty matrix must be 2-D, got dims {self.G.shape}")
        if self.G.min() < 0.0 or self.G.max() > 1.0:
            raise LossError("penalty values must lie in [0, 1]")


def penalty_matrix(score: Score, r: int = 1,
                   decay: int = DEFAULT_DECAY_FRAMES,
                   shift: int = DEFAULT_SHIFT_FRAMES) -> PenaltyMatrix:
    """Mora-band penalty matrix of dims N x ceil(T / r).

    Every entry shares its mora's frame band [b0, b1), translated `shift`
    frames earlier (both edges, so bands keep tiling).  A decoder step t
    samples the band at its first frame f = r*t; the penalty is 0 inside
    the band and min(1, d / decay) at d frames from the nearest allowed
    frame.
    """
    if decay <= 0 or shift < 0 or r < 1:
        raise LossError(f"bad penalty parameters decay={decay} shift={shift} r={r}")
    entries = flatten(score)
    bands = mora_boundaries(score)
    b0 = np.empty(len(entries))
    b1 = np.empty(len(entries))
    for band in bands:
        b0[band.entry_start:band.entry_stop] = band.start_frame - shift
        b1[band.entry_start:band.entry_stop] = band.end_frame - shift
    tdec = math.ceil(score.total_frames / r)
    f = (r * np.arange(tdec)).astype(np.float64)
    dist = np.maximum(np.maximum(b0[:, None] - f[None, :],
                                 f[None, :] - b1[:, None] + 1.0), 0.0)
    g = np.minimum(1.0, dist / decay)
    return PenaltyMatrix(g, decay_frames=decay, shift_frames=shift)


def guided_attention_loss(g: np.ndarray, a: np.ndarray) -> float:
    """(1/(N*T)) * ||G (.) A||_1 over all cells."""
    if g.shape != a.shape:
        raise LossError(f"penalty dims {g.shape} != alignment dims {a.shape}")
    return float(np.abs(g * a).sum() / g.size)


def guided_attention_loss_node(g: np.ndarray, a: Node) -> Node:
    """Differentiable guided loss; alignment entries are non-negative by
    construction so the element-wise |.| is dropped."""
    if g.shape != a.value.dims:
        raise LossError(f"penalty dims {g.shape} != alignment dims {a.value.dims}")
    return ad.scale(ad.sum_all(ad.mul(ad.constant(g), a)), 1.0 / g.size)


def feature_loss(o: np.ndarray, o_hat: np.ndarray) -> float:
    """(1/(T*D)) * sum_t ||o_t - o_hat_t||^2."""
    if o.shape != o_hat.shape:
        raise LossError(f"target dims {o.shape} != prediction dims {o_hat.shape}")
    d = o - o_hat
    return float((d * d).sum() / o.size)


def feature_loss_node(o: np.ndarray, o_hat: Node) -> Node:
    if o.shape != o_hat.value.dims:
        raise LossError(f"target dims {o.shape} != prediction dims {o_hat.value.dims}")
    return ad.scale(ad.squared_norm(ad.sub(o_hat, ad.constant(o))), 1.0 / o.size)


@dataclass(frozen=True)
class LossReport:
    feat_decoder: float
    feat_postnet: float
    guided: float
    total: float
    guided_weight: float = DEFAULT_GUIDED_WEIGHT

    def __post_init__(self):
        expect = self.feat_decoder + self.feat_postnet + self.guided_weight * self.guided
        if abs(self.total - expect) > 1e-12:
            raise LossError(f"inconsistent total {self.total} != {expect}")


def total_loss(o: np.ndarray, o_dec: np.ndarray, o_post: np.ndarray,
               g: np.ndarray, a: np.ndarray,
               guided_weight: float = DEFAULT_GUIDED_WEIGHT) -> LossReport:
    """Total objective: both feature losses plus weighted guided loss."""
    if guided_weight < 0:
        raise LossError(f"guided weight must be non-negative, got {guided_weight}")
    fd = feature_loss(o, o_dec)
    fp = feature_loss(o, o_post)
    ga = guided_attention_loss(g, a)
    return LossReport(fd, fp, ga, fd + fp + guided_weight * ga, guided_weight)
