"""Musical note position-aware attention.

The alignment weight over encoder phonemes is computed recursively: a
content/position-based output probability reweights the previous alignment
after a stay-or-advance transition, so mass can never skip a phoneme and,
for a transition probability that is constant across phonemes, the
recursion reduces to forward attention with a scalar transition agent.

Both probability heads share one structure: an additive scoring network
over decoder query, encoder state and (optionally) the embedded note
position of the decoder step relative to each entry's note.  The
transition head additionally sees convolutional features of the cumulative
alignment.  All functions build autodiff nodes so every head is
differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node

TRANSITION_MODES = ("full", "fixed_half", "phoneme_only", "time_only")


class AttentionError(Exception):
    pass


class AlignmentCollapseError(AttentionError):
    """Every entry of the unnormalized alignment went to zero."""


@dataclass(frozen=True)
class AttentionMode:
    use_position: bool = True
    transition: str = "full"

    def __post_init__(self):
        if self.transition not in TRANSITION_MODES:
            raise AttentionError(f"unknown transition mode {self.transition!r}")


@dataclass
class AttentionParams:
    """Node handles for every learned tensor of the attention mechanism.

    Head e scores the output probability, head u the transition
    probability; Mp/bp embed the raw (p1, p2, p3) note position triple and
    K holds the location-feature convolution kernels.
    """

    We: Node   # (A, Q)
    Ve: Node   # (A, H)
    Ue: Node   # (A, E)
    be: Node   # (A,)
    ve: Node   # (A,)
    Wu: Node   # (A, Q)
    Vu: Node   # (A, H)
    Uu: Node   # (A, E)
    Tu: Node   # (A, C)
    bu: Node   # (A,)
    vu: Node   # (A,)
    Mp: Node   # (E, 3)
    bp: Node   # (E,)
    K: Node    # (C, 1, width)

    NAMES = ("We", "Ve", "Ue", "be", "ve", "Wu", "Vu", "Uu", "Tu", "bu", "vu",
             "Mp", "bp", "K")

    @classmethod
    def bind(cls, nodes: Mapping[str, Node], prefix: str = "att_") -> "AttentionParams":
        return cls(**{name: nodes[prefix + name] for name in cls.NAMES})


def attention_param_shapes(attn_dim: int, pos_dim: int, loc_channels: int,
                           loc_width: int, query_dim: int, encoder_dim: int
                           ) -> dict[str, tuple[int, ...]]:
    a, e, c = attn_dim, pos_dim, loc_channels
    return {
        "We": (a, query_dim), "Ve": (a, encoder_dim), "Ue": (a, e),
        "be": (a,), "ve": (a,),
        "Wu": (a, query_dim), "Vu": (a, encoder_dim), "Uu": (a, e),
        "Tu": (a, c), "bu": (a,), "vu": (a,),
        "Mp": (e, 3), "bp": (e,),
        "K": (c, 1, loc_width),
    }


@dataclass
class AlignmentState:
    """Explicit recursion state: alignment, its running sum, and u_{t-1}.

    prev_u is None only before the first step; the first step's transition
    probability (computed from the first query) then stands in for u_0.
    """

    alpha: Node
    cumulative: Node
    prev_u: Node | None = None


def initial_state(n: int) -> AlignmentState:
    """One-hot alignment on the first entry, zero cumulative alignment."""
    a0 = np.zeros(n)
    a0[0] = 1.0
    return AlignmentState(ad.constant(a0), ad.constant(np.zeros(n)), None)


# ---------------------------------------------------------------------------
# probability heads


def embed_position(params: AttentionParams, triple: Node) -> Node:
    """tanh(Mp [p1,p2,p3] + bp); accepts one triple (3,) or a batch (N, 3)."""
    if len(triple.value.dims) == 1:
        return ad.tanh(ad.add(ad.matvec(params.Mp, triple), params.bp))
    return ad.tanh(ad.add_rowvec(ad.matmul_t(triple, params.Mp), params.bp))


def _head_scores(w, v_term, u_mat, b, q, pt, extra=None):
    """tanh(V x_n [+ U p_{t,n}] [+ T f_{t,n}] + W q_t + b) for all n at once."""
    acc = v_term
    if pt is not None:
        acc = ad.add(acc, ad.matmul_t(pt, u_mat))
    if extra is not None:
        acc = ad.add(acc, extra)
    return ad.tanh(ad.add_rowvec(acc, ad.add(ad.matvec(w, q), b)))


def output_probability(params: AttentionParams, mode: AttentionMode,
                       q: Node, x: Node, pt: Node | None,
                       xv: Node | None = None) -> Node:
    """Softmax-normalized output probability y_t over entries.

    xv may carry the precomputed V_e x_n term (it is step-independent);
    the position term is dropped when mode.use_position is false.
    """
    if xv is None:
        xv = ad.matmul_t(x, params.Ve)
    pt_used = pt if mode.use_position else None
    th = _head_scores(params.We, xv, params.Ue, params.be, q, pt_used)
    return ad.softmax(ad.matvec(th, params.ve))


def location_features(params: AttentionParams, cumulative: Node) -> Node:
    """Same-padded 1-D convolution of the cumulative alignment, (N, C)."""
    n = cumulative.value.dims[0]
    return ad.conv1d(ad.reshape(cumulative, (n, 1)), params.K)


def transition_probability(params: AttentionParams, mode: AttentionMode,
                           q: Node, x: Node, pt: Node | None, f: Node | None,
                           xv: Node | None = None) -> Node:
    """Stay-or-advance probability u_t over entries, strictly inside (0, 1).

    full uses all terms; fixed_half is the constant 0.5 baseline;
    phoneme_only keeps only the encoder-state term (time-invariant);
    time_only keeps only the query term, broadcast over entries.
    """
    n = x.value.dims[0]
    if mode.transition == "fixed_half":
        return ad.constant(np.full(n, 0.5))
    if mode.transition == "time_only":
        th = ad.tanh(ad.add(ad.matvec(params.Wu, q), params.bu))
        return ad.fill(ad.sigmoid(ad.sum_all(ad.mul(params.vu, th))), n)
    if xv is None:
        xv = ad.matmul_t(x, params.Vu)
    if mode.transition == "phoneme_only":
        th = ad.tanh(ad.add_rowvec(xv, params.bu))
        return ad.sigmoid(ad.matvec(th, params.vu))
    pt_used = pt if mode.use_position else None
    tf = ad.matmul_t(f, params.Tu)
    th = _head_scores(params.Wu, xv, params.Uu, params.bu, q, pt_used, extra=tf)
    return ad.sigmoid(ad.matvec(th, params.vu))


# ---------------------------------------------------------------------------
# recursion


def forward_step(state: AlignmentState, y: Node, u_t: Node) -> tuple[Node, AlignmentState]:
    """One step of the stay-or-advance recursion with guarded renormalization.

    Uses u_{t-1} held in the state (falling back to u_t before the first
    step), reweights by y, renormalizes with a +1e-8 denominator guard,
    then returns the state for the next step with cumulative and prev_u
    advanced.
    """
    u_prev = state.prev_u if state.prev_u is not None else u_t
    ua = ad.mul(u_prev, state.alpha)
    unnorm = ad.mul(ad.add(ad.sub(state.alpha, ua), ad.shift_forward(ua)), y)
    s = ad.sum_all(unnorm)
    if float(s.value.array) <= 0.0:
        raise AlignmentCollapseError(
            "all entries of the unnormalized alignment are zero; "
            "output probability has no mass where the alignment sits")
    alpha = ad.div_scalar(unnorm, ad.add(s, ad.constant(np.asarray(1e-8))))
    new_state = AlignmentState(alpha, ad.add(state.cumulative, alpha), u_t)
    return alpha, new_state


def context(alpha: Node, x: Node) -> Node:
    """c_t = sum_n alpha_t(n) x_n."""
    return ad.matvec_t(x, alpha)


def attend(params: AttentionParams, mode: AttentionMode, q: Node, x: Node,
           pt: Node | None, state: AlignmentState,
           xv_e: Node | None = None, xv_u: Node | None = None,
           static_u: Node | None = None,
           ) -> tuple[Node, Node, Node, AlignmentState]:
    """One full attention step: (alpha_t, c_t, u_t, next state).

    xv_e / xv_u are optional per-utterance caches of the V x terms;
    static_u short-circuits the transition head for modes whose u does not
    depend on the step (fixed_half, phoneme_only).
    """
    y = output_probability(params, mode, q, x, pt, xv=xv_e)
    if static_u is not None and mode.transition in ("fixed_half", "phoneme_only"):
        u_t = static_u
    else:
        f = None
        if mode.transition == "full":
            f = location_features(params, state.cumulative)
        u_t = transition_probability(params, mode, q, x, pt, f, xv=xv_u)
    alpha, new_state = forward_step(state, y, u_t)
    return alpha, context(alpha, x), u_t, new_state
