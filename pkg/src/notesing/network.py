"""Desk-scale encoder/decoder around the note-position-aware attention.

Single-layer gated recurrences everywhere: a bidirectional encoder over
phoneme-level score features, a Pre-Net + auxiliary-feature projection
feeding an attention recurrence, the stay-or-advance attention itself, a
decoder recurrence emitting r acoustic frames per step, and a small
convolutional Post-Net refining the decoded sequence.  Log-F0 is handled
as a residual: the model predicts the deviation from the attention-
weighted note pitch, and synthesis adds the two back together.

Training is teacher-forced, one song per step, Adam with a global
gradient-norm clip.  Everything is float64 and deterministic under a
fixed seed, including Pre-Net dropout.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .attention import (
    AlignmentState,
    AttentionMode,
    AttentionParams,
    attend,
    attention_param_shapes,
    embed_position,
    initial_state,
    transition_probability,
)
from .autodiff import Node, ParamSet, Tensor
from .loss import LossReport, feature_loss_node, guided_attention_loss, penalty_matrix
from .score import (
    AUX_FEATURE_DIM,
    PHONEME_FEATURE_DIM,
    SEMITONE,
    Score,
    auxiliary_note_frames,
    entry_note_spans,
    note_pitch_vector,
    phoneme_features,
    position_matrix,
)

CHECKPOINT_MAGIC = b"NPAT"
CHECKPOINT_VERSION = 1


class NetworkError(ValueError):
    pass


class CheckpointError(NetworkError):
    """Unreadable checkpoint or parameter/config dimension mismatch."""


class TrainingDiverged(RuntimeError):
    """Loss or gradient became non-finite; parameters were not updated."""


@dataclass(frozen=True)
class ModelConfig:
    acoustic_dim: int = 8            # D: timbre + logF0 residual + V/UV
    encoder_dim: int = 64            # H, split over the two directions
    query_dim: int = 64              # Q, also the decoder recurrence size
    prenet_dims: tuple[int, int] = (64, 32)
    aux_proj_dim: int = 8
    attn_dim: int = 32               # A
    pos_dim: int = 16                # E, note-position embedding size
    loc_channels: int = 4            # C
    loc_width: int = 15
    postnet_channels: int = 8
    postnet_width: int = 5
    reduction_factor: int = 3
    prenet_dropout: float = 0.5
    residual_scale: float = SEMITONE   # logF0 units per stored residual unit
    mode: AttentionMode = AttentionMode()
    use_aux: bool = True             # auxiliary note features on/off
    use_attention: bool = True       # off: ground-truth alignment columns
    guided_weight: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.reduction_factor < 1:
            raise NetworkError("reduction_factor must be >= 1")
        if self.acoustic_dim < 3:
            raise NetworkError(
                "acoustic_dim must be >= 3 (timbre + logF0 residual + V/UV)")
        if self.encoder_dim % 2:
            raise NetworkError("encoder_dim must be even (bidirectional halves)")
        if len(self.prenet_dims) != 2 or min(self.prenet_dims) < 1:
            raise NetworkError("prenet_dims must be two positive sizes")
        if self.loc_width % 2 == 0 or self.postnet_width % 2 == 0:
            raise NetworkError("convolution widths must be odd")
        if not 0.0 <= self.prenet_dropout < 1.0:
            raise NetworkError("prenet_dropout must be in [0, 1)")
        if self.guided_weight < 0:
            raise NetworkError("guided_weight must be non-negative")

    @property
    def frames_per_step(self) -> int:
        return self.reduction_factor * self.acoustic_dim


def _gru_shapes(prefix: str, in_dim: int, hid: int) -> dict[str, tuple[int, ...]]:
    return {
        prefix + "Wg": (2 * hid, in_dim), prefix + "Ug": (2 * hid, hid),
        prefix + "bg": (2 * hid,),
        prefix + "Wc": (hid, in_dim), prefix + "Uc": (hid, hid),
        prefix + "bc": (hid,),
    }


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h = cfg.encoder_dim // 2
    d_in = cfg.prenet_dims[1] + cfg.aux_proj_dim
    shapes: dict[str, tuple[int, ...]] = {
        "enc_proj_W": (cfg.encoder_dim, PHONEME_FEATURE_DIM),
        "enc_proj_b": (cfg.encoder_dim,),
        "enc_conv_K": (cfg.encoder_dim, cfg.encoder_dim, 5),
        "enc_conv_b": (cfg.encoder_dim,),
        "pre_W1": (cfg.prenet_dims[0], cfg.frames_per_step),
        "pre_b1": (cfg.prenet_dims[0],),
        "pre_W2": (cfg.prenet_dims[1], cfg.prenet_dims[0]),
        "pre_b2": (cfg.prenet_dims[1],),
        "aux_W": (cfg.aux_proj_dim, AUX_FEATURE_DIM),
        "aux_b": (cfg.aux_proj_dim,),
        "out_W": (cfg.frames_per_step, cfg.query_dim),
        "out_b": (cfg.frames_per_step,),
        "post_K0": (cfg.postnet_channels, cfg.acoustic_dim, cfg.postnet_width),
        "post_b0": (cfg.postnet_channels,),
        "post_K1": (cfg.postnet_channels, cfg.postnet_channels, cfg.postnet_width),
        "post_b1": (cfg.postnet_channels,),
        "post_K2": (cfg.acoustic_dim, cfg.postnet_channels, cfg.postnet_width),
        "post_b2": (cfg.acoustic_dim,),
    }
    shapes.update(_gru_shapes("enc_fw_", cfg.encoder_dim, h))
    shapes.update(_gru_shapes("enc_bw_", cfg.encoder_dim, h))
    shapes.update(_gru_shapes("att_rnn_", d_in, cfg.query_dim))
    shapes.update(_gru_shapes("dec_rnn_", cfg.query_dim + cfg.encoder_dim,
                              cfg.query_dim))
    att = attention_param_shapes(cfg.attn_dim, cfg.pos_dim, cfg.loc_channels,
                                 cfg.loc_width, cfg.query_dim, cfg.encoder_dim)
    shapes.update({"att_" + k: v for k, v in att.items()})
    return shapes


# the Post-Net residual starts at zero so refinement begins as the identity
ZERO_INIT = ("post_K2", "post_b2")
# rank-1 but not biases: the score vectors that reduce each head to a scalar
RANDOM_VECTORS = ("att_ve", "att_vu")


def init_params(cfg: ModelConfig) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), +) weights, zero biases, zeroed final Post-Net."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 101)))
    params = ParamSet()
    for name, shape in sorted(parameter_shapes(cfg).items()):
        if name in ZERO_INIT or (len(shape) == 1 and name not in RANDOM_VECTORS):
            params[name] = Tensor(np.zeros(shape))
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape))
    return params


def validate_params(params: ParamSet, cfg: ModelConfig) -> None:
    shapes = parameter_shapes(cfg)
    missing = sorted(set(shapes) - set(params.names()))
    extra = sorted(set(params.names()) - set(shapes))
    if missing or extra:
        raise CheckpointError(
            f"parameter names do not match config: missing {missing}, "
            f"unexpected {extra}")
    for name, shape in shapes.items():
        have = params[name].dims
        if have != shape:
            raise CheckpointError(
                f"parameter {name}: config wants dims {shape}, "
                f"checkpoint has {have}")


# ---------------------------------------------------------------------------
# checkpoint bytes


def save_checkpoint(path, params: ParamSet, version: int = CHECKPOINT_VERSION) -> None:
    """Records are (name-length, name, rank, dims, float64 LE values), sorted."""
    blob = bytearray(CHECKPOINT_MAGIC)
    blob += struct.pack("<I", version)
    for name in sorted(params.names()):
        arr = params[name].array
        enc = name.encode("utf-8")
        blob += struct.pack("<I", len(enc)) + enc
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f8", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[int, ParamSet]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    pos = 4
    try:
        (version,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params = ParamSet()
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims))
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
            params[name] = Tensor(arr.astype(np.float64).reshape(dims))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from exc
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return version, params


# ---------------------------------------------------------------------------
# forward graphs


def _gru_step(nodes, prefix: str, x: Node, h: Node, hid: int) -> Node:
    """h + z*(cand - h) with stacked update/reset gates."""
    gates = ad.sigmoid(ad.add(ad.add(ad.matvec(nodes[prefix + "Wg"], x),
                                     ad.matvec(nodes[prefix + "Ug"], h)),
                              nodes[prefix + "bg"]))
    z = ad.vslice(gates, 0, hid)
    r = ad.vslice(gates, hid, 2 * hid)
    cand = ad.tanh(ad.add(ad.add(ad.matvec(nodes[prefix + "Wc"], x),
                                 ad.matvec(nodes[prefix + "Uc"], ad.mul(r, h))),
                          nodes[prefix + "bc"]))
    return ad.add(h, ad.mul(z, ad.sub(cand, h)))


@dataclass
class DecoderState:
    att_h: Node
    dec_h: Node
    align: AlignmentState | None
    prev_frames: Node            # flattened previous output group, zeros at t=0


@dataclass
class _Utterance:
    """Per-song graph context: bound parameters, encoder memory, caches."""

    nodes: dict[str, Node]
    attp: AttentionParams
    x: Node                                  # encoder memory, (N, H)
    xv_e: Node | None
    xv_u: Node | None
    static_u: Node | None
    score: Score
    spans: tuple[np.ndarray, np.ndarray]
    aux: np.ndarray                          # (T, 6)
    oracle: np.ndarray | None                # frame-level entry indices
    dropout_rng: np.random.Generator | None


@dataclass
class ForwardResult:
    """Teacher-forced pass: padded outputs, alignment, losses, loss node."""

    o_dec: np.ndarray            # (Tpad, D)
    o_post: np.ndarray           # (Tpad, D)
    alignment: np.ndarray        # (N, Tdec)
    report: LossReport
    loss: Node
    o_dec_node: Node
    o_post_node: Node
    alignment_node: Node         # (Tdec, N)
    t_total: int


@dataclass
class SynthesisResult:
    frames: np.ndarray           # (T, D), logF0 channel absolute
    raw_frames: np.ndarray       # (T, D), logF0 channel still residual
    alignment: np.ndarray        # (N, Tdec)


def pitch_normalize(alpha: np.ndarray, note_pitch: np.ndarray,
                    residual: np.ndarray) -> np.ndarray:
    """Absolute logF0 for one output group: alpha-weighted pitch + residual."""
    return float(alpha @ note_pitch) + residual


class Model:
    """Trainable singing model; all state lives in `params` (a ParamSet)."""

    def __init__(self, config: ModelConfig, params: ParamSet | None = None):
        self.config = config
        if params is None:
            params = init_params(config)
        else:
            validate_params(params, config)
        self.params = params

    # -- graph pieces -------------------------------------------------------

    def bind(self) -> dict[str, Node]:
        return {name: ad.constant(t.array, name=name)
                for name, t in self.params.items()}

    def encode(self, nodes: dict[str, Node], features: np.ndarray) -> Node:
        """Phoneme features (N, Fs) -> encoder memory (N, H)."""
        if features.ndim != 2 or features.shape[0] < 1:
            raise NetworkError(f"bad encoder input dims {features.shape}")
        cfg = self.config
        n = features.shape[0]
        h = cfg.encoder_dim // 2
        proj = ad.add_rowvec(ad.matmul_t(ad.constant(features), nodes["enc_proj_W"]),
                             nodes["enc_proj_b"])
        conv = ad.tanh(ad.add_rowvec(ad.conv1d(proj, nodes["enc_conv_K"]),
                                     nodes["enc_conv_b"]))
        zero = ad.constant(np.zeros(h))
        fw: list[Node] = []
        state = zero
        for i in range(n):
            state = _gru_step(nodes, "enc_fw_", ad.row(conv, i), state, h)
            fw.append(state)
        bw: list[Node | None] = [None] * n
        state = zero
        for i in reversed(range(n)):
            state = _gru_step(nodes, "enc_bw_", ad.row(conv, i), state, h)
            bw[i] = state
        return ad.stack_rows([ad.concat((fw[i], bw[i])) for i in range(n)])

    def postnet(self, nodes: dict[str, Node], o: Node) -> Node:
        """Convolutional residual over the decoded sequence, (T, D) -> (T, D)."""
        c = ad.tanh(ad.add_rowvec(ad.conv1d(o, nodes["post_K0"]), nodes["post_b0"]))
        c = ad.tanh(ad.add_rowvec(ad.conv1d(c, nodes["post_K1"]), nodes["post_b1"]))
        return ad.add_rowvec(ad.conv1d(c, nodes["post_K2"]), nodes["post_b2"])

    def prepare(self, score: Score, oracle_alignment: np.ndarray | None = None,
                dropout_rng: np.random.Generator | None = None) -> _Utterance:
        cfg = self.config
        if not cfg.use_attention:
            if oracle_alignment is None:
                raise NetworkError(
                    "this configuration replaces attention with ground-truth "
                    "alignment; pass oracle_alignment")
            if oracle_alignment.shape[0] != score.total_frames:
                raise NetworkError("oracle alignment frame count mismatch")
        nodes = self.bind()
        x = self.encode(nodes, phoneme_features(score))
        attp = AttentionParams.bind(nodes)
        xv_e = xv_u = static_u = None
        if cfg.use_attention:
            xv_e = ad.matmul_t(x, attp.Ve)
            if cfg.mode.transition in ("full", "phoneme_only"):
                xv_u = ad.matmul_t(x, attp.Vu)
            if cfg.mode.transition in ("fixed_half", "phoneme_only"):
                static_u = transition_probability(attp, cfg.mode, None, x,
                                                  None, None, xv=xv_u)
        return _Utterance(nodes=nodes, attp=attp, x=x, xv_e=xv_e, xv_u=xv_u,
                          static_u=static_u, score=score,
                          spans=entry_note_spans(score),
                          aux=auxiliary_note_frames(score),
                          oracle=oracle_alignment, dropout_rng=dropout_rng)

    def initial_decoder_state(self, utt: _Utterance) -> DecoderState:
        cfg = self.config
        n = utt.x.value.dims[0]
        return DecoderState(
            att_h=ad.constant(np.zeros(cfg.query_dim)),
            dec_h=ad.constant(np.zeros(cfg.query_dim)),
            align=initial_state(n) if cfg.use_attention else None,
            prev_frames=ad.constant(np.zeros(cfg.frames_per_step)),
        )

    def _prenet(self, utt: _Utterance, prev: Node) -> Node:
        cfg = self.config
        h = prev
        for w, b in (("pre_W1", "pre_b1"), ("pre_W2", "pre_b2")):
            h = ad.tanh(ad.add(ad.matvec(utt.nodes[w], h), utt.nodes[b]))
            if utt.dropout_rng is not None and cfg.prenet_dropout > 0.0:
                keep = 1.0 - cfg.prenet_dropout
                mask = (utt.dropout_rng.random(h.value.dims[0]) < keep) / keep
                h = ad.mul(h, ad.constant(mask))
        return h

    def decode_step(self, utt: _Utterance, state: DecoderState, t: int
                    ) -> tuple[Node, Node, Node, DecoderState]:
        """One decoder step: (output group (r*D,), q_t, alpha_t, next state).

        Auxiliary and note-position features are sampled at the first frame
        of the step's output group.
        """
        cfg = self.config
        score = utt.score
        frame = min(cfg.reduction_factor * t, score.total_frames - 1)
        pre = self._prenet(utt, state.prev_frames)
        if cfg.use_aux:
            a = ad.add(ad.matvec(utt.nodes["aux_W"], ad.constant(utt.aux[frame])),
                       utt.nodes["aux_b"])
        else:
            a = ad.constant(np.zeros(cfg.aux_proj_dim))
        att_h = _gru_step(utt.nodes, "att_rnn_", ad.concat((pre, a)),
                          state.att_h, cfg.query_dim)
        if cfg.use_attention:
            pt = None
            if cfg.mode.use_position:
                pos = position_matrix(score, frame, spans=utt.spans)
                pt = embed_position(utt.attp, ad.constant(pos))
            alpha, ctx, _u, align = attend(utt.attp, cfg.mode, att_h, utt.x,
                                           pt, state.align, xv_e=utt.xv_e,
                                           xv_u=utt.xv_u, static_u=utt.static_u)
        else:
            onehot = np.zeros(utt.x.value.dims[0])
            onehot[int(utt.oracle[frame])] = 1.0
            alpha = ad.constant(onehot)
            ctx = ad.matvec_t(utt.x, alpha)
            align = state.align
        dec_h = _gru_step(utt.nodes, "dec_rnn_", ad.concat((att_h, ctx)),
                          state.dec_h, cfg.query_dim)
        out = ad.add(ad.matvec(utt.nodes["out_W"], dec_h), utt.nodes["out_b"])
        return out, att_h, alpha, DecoderState(att_h, dec_h, align, out)

    # -- whole-song passes --------------------------------------------------

    def _pad_target(self, target: np.ndarray, t_total: int) -> np.ndarray:
        r = self.config.reduction_factor
        t_pad = math.ceil(t_total / r) * r
        if t_pad == t_total:
            return target
        return np.vstack([target, np.repeat(target[-1:], t_pad - t_total, axis=0)])

    def forward_teacher(self, score: Score, target: np.ndarray, *,
                        teacher_forcing: bool = True,
                        dropout_rng: np.random.Generator | None = None,
                        oracle_alignment: np.ndarray | None = None,
                        ) -> ForwardResult:
        """Teacher-forced pass over one song, with losses.

        The target is padded to a multiple of r by repeating its last
        frame; outputs keep the padded length (t_total records the true
        one).  With teacher_forcing=False the decoder consumes its own
        previous output group instead, which matches synthesize
        step-for-step.
        """
        cfg = self.config
        t_total = score.total_frames
        if target.shape != (t_total, cfg.acoustic_dim):
            raise NetworkError(
                f"target dims {target.shape} do not match score frames "
                f"({t_total}) x acoustic_dim ({cfg.acoustic_dim})")
        r = cfg.reduction_factor
        tdec = math.ceil(t_total / r)
        padded = self._pad_target(target, t_total)
        utt = self.prepare(score, oracle_alignment, dropout_rng)
        state = self.initial_decoder_state(utt)
        outs: list[Node] = []
        alphas: list[Node] = []
        for t in range(tdec):
            if t > 0 and teacher_forcing:
                prev = padded[(t - 1) * r: t * r].reshape(-1)
                state = replace(state, prev_frames=ad.constant(prev))
            out, _q, alpha, state = self.decode_step(utt, state, t)
            outs.append(out)
            alphas.append(alpha)
        o_dec = ad.reshape(ad.stack_rows(outs), (tdec * r, cfg.acoustic_dim))
        o_post = ad.add(o_dec, self.postnet(utt.nodes, o_dec))
        a_node = ad.stack_rows(alphas)                       # (Tdec, N)
        fd = feature_loss_node(padded, o_dec)
        fp = feature_loss_node(padded, o_post)
        loss = ad.add(fd, fp)
        g = penalty_matrix(score, r=r).G                     # (N, Tdec)
        a_val = a_node.value.array.T
        guided = guided_attention_loss(g, a_val)
        if cfg.guided_weight > 0.0:
            gl = ad.scale(ad.sum_all(ad.mul(ad.constant(g.T), a_node)),
                          1.0 / g.size)
            loss = ad.add(loss, ad.scale(gl, cfg.guided_weight))
        report = LossReport(float(fd.value.array), float(fp.value.array),
                            guided, float(loss.value.array), cfg.guided_weight)
        return ForwardResult(o_dec.value.array.copy(), o_post.value.array.copy(),
                             a_val.copy(), report, loss, o_dec, o_post, a_node,
                             t_total)

    def synthesize(self, score: Score,
                   oracle_alignment: np.ndarray | None = None) -> SynthesisResult:
        """Autoregressive decoding for exactly ceil(T/r) steps, no dropout.

        The logF0 residual channel of `frames` is replaced by the absolute
        value: attention-weighted note pitch plus the predicted residual
        (scaled from stored units to log units by residual_scale).
        """
        cfg = self.config
        t_total = score.total_frames
        r = cfg.reduction_factor
        tdec = math.ceil(t_total / r)
        utt = self.prepare(score, oracle_alignment, dropout_rng=None)
        state = self.initial_decoder_state(utt)
        pitch = note_pitch_vector(score)
        groups: list[np.ndarray] = []
        weights: list[np.ndarray] = []
        for t in range(tdec):
            out, _q, alpha, state = self.decode_step(utt, state, t)
            groups.append(out.value.array.reshape(r, cfg.acoustic_dim))
            weights.append(alpha.value.array.copy())
        raw = np.vstack(groups)
        raw = raw + self.postnet(utt.nodes, ad.constant(raw)).value.array
        frames = raw.copy()
        for t, alpha in enumerate(weights):
            lo = t * r
            frames[lo:lo + r, -2] = pitch_normalize(
                alpha, pitch, cfg.residual_scale * frames[lo:lo + r, -2])
        alignment = np.stack(weights, axis=1)
        return SynthesisResult(frames[:t_total], raw[:t_total], alignment)


# ---------------------------------------------------------------------------
# training


class Adam:
    """Adam with a global gradient-norm clip applied before the update."""

    def __init__(self, params: ParamSet, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = 1.0):
        if lr <= 0:
            raise NetworkError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {n: np.zeros(params[n].dims) for n in params}
        self.v = {n: np.zeros(params[n].dims) for n in params}

    def apply(self, grads: dict[str, Tensor]) -> float:
        """Update parameters in place; returns the pre-clip gradient norm."""
        sq = 0.0
        for name in self.params:
            g = grads[name].array
            sq += float((g * g).sum())
        norm = math.sqrt(sq)
        if not math.isfinite(norm):
            raise TrainingDiverged(f"gradient norm is {norm}")
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in self.params:
            g = grads[name].array * scale
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[name].array[...] -= (
                self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        return norm


class Trainer:
    """One-song-per-step teacher-forced training loop.

    Deterministic under (config.seed, corpus): epoch order and Pre-Net
    dropout masks come from private generators seeded from it.  `log`
    accumulates one (step, feat_dec, feat_post, guided, total) row per
    step.
    """

    def __init__(self, model: Model, corpus, *, lr: float = 1e-3,
                 clip_norm: float | None = 1.0, batch: int = 1,
                 seed: int | None = None):
        self.model = model
        self.corpus = list(corpus)
        if not self.corpus:
            raise NetworkError("empty training corpus")
        if batch < 1:
            raise NetworkError("batch must be >= 1")
        self.batch = batch
        base = model.config.seed if seed is None else seed
        self._order_rng = np.random.default_rng(np.random.SeedSequence((base, 211)))
        self._dropout_rng = np.random.default_rng(np.random.SeedSequence((base, 223)))
        self.optimizer = Adam(model.params, lr=lr, clip_norm=clip_norm)
        self._queue: list[int] = []
        self.step_count = 0
        self.log: list[tuple[int, float, float, float, float]] = []

    def _next_song(self):
        if not self._queue:
            self._queue = [int(i) for i in
                           self._order_rng.permutation(len(self.corpus))]
        return self.corpus[self._queue.pop(0)]

    def train_step(self) -> LossReport:
        """One update: gradients averaged over `batch` songs, song order fixed."""
        total = np.zeros(4)
        acc: dict[str, np.ndarray] | None = None
        weight = None
        for _ in range(self.batch):
            score, truth = self._next_song()
            oracle = None if self.model.config.use_attention else truth.alignment
            res = self.model.forward_teacher(score, truth.frames,
                                             dropout_rng=self._dropout_rng,
                                             oracle_alignment=oracle)
            rep = res.report
            if not math.isfinite(rep.total):
                raise TrainingDiverged(f"loss became {rep.total} at step "
                                       f"{self.step_count + 1}")
            grads = ad.gradients(res.loss, self.model.params)
            if acc is None:
                acc = {n: g.array for n, g in grads.items()}
            else:
                for n, g in grads.items():
                    acc[n] += g.array
            total += (rep.feat_decoder, rep.feat_postnet, rep.guided, rep.total)
            weight = rep.guided_weight
        scale = 1.0 / self.batch
        self.optimizer.apply({n: Tensor(g * scale) for n, g in acc.items()})
        fd, fp, g, tot = (total * scale).tolist()
        rep = LossReport(fd, fp, g, tot, weight)
        self.step_count += 1
        self.log.append((self.step_count, fd, fp, g, tot))
        return rep

    def run(self, steps: int, stop_feat_below: float | None = None) -> LossReport:
        """Run up to `steps` more steps; optionally stop once the summed
        feature losses fall under a threshold."""
        rep = None
        for _ in range(steps):
            rep = self.train_step()
            if (stop_feat_below is not None
                    and rep.feat_decoder + rep.feat_postnet < stop_feat_below):
                break
        if rep is None:
            raise NetworkError("steps must be >= 1")
        return rep
