"""Command-line entry points: corpus generation, training, synthesis,
evaluation, ablation sweeps, and artifact export.

Configuration is a flat `key = value` text file with `#` comments; CLI
flags override file values, which override the built-in defaults.  MOS is
not reproducible, so evaluation reports timing MAE (frames), monotonicity
rate, and F0 RMSE (cents, voiced frames) instead, plus feature and guided
losses.

Exit codes: 0 ok, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .attention import AttentionMode
from .loss import feature_loss, guided_attention_loss, penalty_matrix
from .network import (
    CheckpointError,
    Model,
    ModelConfig,
    Trainer,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
)
from .score import Score
from .synthdata import (
    CorpusSpec,
    GroundTruth,
    corpus_checksum,
    expand_alignment,
    f0_rmse_cents,
    generate_corpus,
    load_corpus,
    monotonicity_rate,
    save_corpus,
    timing_error,
    truth_log_f0,
)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# modes


@dataclass(frozen=True)
class ModeToggles:
    """Which components a named system keeps."""

    use_position: bool
    use_aux: bool
    use_guided: bool
    transition: str
    oracle_alignment: bool = False


MODES: dict[str, ModeToggles] = {
    # note-position / aux-feature / guided-loss ablations
    "base":    ModeToggles(False, False, False, "full"),
    "nf":      ModeToggles(False, True,  False, "full"),
    "np":      ModeToggles(True,  False, False, "full"),
    "npnf":    ModeToggles(True,  True,  False, "full"),
    "prop":    ModeToggles(True,  True,  True,  "full"),
    # attention-mechanism ablations; all keep the prop conditions otherwise
    "noatt":   ModeToggles(True,  True,  False, "full", oracle_alignment=True),
    "notrans": ModeToggles(True,  True,  True,  "fixed_half"),
    "ptrans":  ModeToggles(True,  True,  True,  "phoneme_only"),
    "ttrans":  ModeToggles(True,  True,  True,  "time_only"),
}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    mode: str = "prop"
    seed: int = 0
    steps: int = 2000
    lr: float = 1e-3
    batch: int = 1
    clip_norm: float = 1.0
    lam: float = 10.0                  # config key: lambda
    teacher_forcing: bool = True
    checkpoint_every: int = 500
    stop_feat_below: float = 0.0       # 0 disables the early stop
    data_dir: str = "data"
    out_dir: str = "out"
    checkpoint: str = ""
    # corpus
    num_songs: int = 70
    train_songs: int = 60
    notes_min: int = 7
    notes_max: int = 10
    tempo_min: float = 110.0
    tempo_max: float = 180.0
    noise_std: float = 0.1
    frame_shift_ms: float = 5.0
    # model dims
    acoustic_dim: int = 8
    encoder_dim: int = 64
    query_dim: int = 64
    attn_dim: int = 32
    pos_dim: int = 16
    loc_channels: int = 4
    loc_width: int = 15
    postnet_channels: int = 8
    reduction_factor: int = 3
    prenet_dropout: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(
                f"unknown mode {self.mode!r}; choose from {'|'.join(MODES)}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not 0 < self.train_songs < self.num_songs:
            raise ConfigError("need 0 < train_songs < num_songs")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")

    @property
    def guided_weight(self) -> float:
        return self.lam if MODES[self.mode].use_guided else 0.0

    def model_config(self) -> ModelConfig:
        t = MODES[self.mode]
        return ModelConfig(
            acoustic_dim=self.acoustic_dim, encoder_dim=self.encoder_dim,
            query_dim=self.query_dim, attn_dim=self.attn_dim,
            pos_dim=self.pos_dim, loc_channels=self.loc_channels,
            loc_width=self.loc_width, postnet_channels=self.postnet_channels,
            reduction_factor=self.reduction_factor,
            prenet_dropout=self.prenet_dropout,
            mode=AttentionMode(t.use_position, t.transition),
            use_aux=t.use_aux, use_attention=not t.oracle_alignment,
            guided_weight=self.guided_weight, seed=self.seed)

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(
            num_songs=self.num_songs, notes_min=self.notes_min,
            notes_max=self.notes_max, tempo_min=self.tempo_min,
            tempo_max=self.tempo_max, noise_std=self.noise_std,
            acoustic_dim=self.acoustic_dim,
            frame_shift_ms=self.frame_shift_ms, seed=self.seed)


_KEY_ALIASES = {"lambda": "lam"}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    field = _KEY_ALIASES.get(key, key)
    if field not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[field]
    raw = raw.strip()
    try:
        if kind == "int":
            return field, int(raw)
        if kind == "float":
            return field, float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return field, True
            if low in ("0", "false", "no", "off"):
                return field, False
            raise ValueError(f"not a boolean: {raw!r}")
        return field, raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def parse_config_file(path: str) -> dict[str, object]:
    """Flat `key = value` lines; `#` starts a comment; blank lines ignored."""
    out: dict[str, object] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = text.split("=", 1)
        field, value = _coerce(key.strip(), raw)
        out[field] = value
    return out


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then config-file values, then CLI flags.

    `ablate` keeps its comma-separated --mode list out of the RunConfig;
    each swept mode is substituted in by the command itself.
    """
    values: dict[str, object] = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    flags = [("seed", "seed"), ("steps", "steps"),
             ("out", "out_dir"), ("checkpoint", "checkpoint")]
    if getattr(args, "command", None) != "ablate":
        flags.append(("mode", "mode"))
    else:
        values.pop("mode", None)
    for flag, field in flags:
        v = getattr(args, flag, None)
        if v is not None:
            values[field] = v
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# metrics


def _f17(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class SongMetrics:
    song: int                     # -1 marks the aggregate row
    feat_loss: float
    guided_loss: float
    timing_mae: float
    monotonicity: float
    f0_rmse_cents: float


@dataclass(frozen=True)
class MetricsReport:
    """Per-song rows plus an aggregate of means over the test songs."""

    rows: tuple[SongMetrics, ...]

    def __post_init__(self):
        if not self.rows:
            raise ConfigError("metrics report needs at least one song")

    @property
    def aggregate(self) -> SongMetrics:
        f = np.array([[r.feat_loss, r.guided_loss, r.timing_mae,
                       r.monotonicity, r.f0_rmse_cents] for r in self.rows])
        return SongMetrics(-1, *(float(v) for v in f.mean(axis=0)))

    def to_csv(self) -> str:
        lines = ["song,feat_loss,guided_loss,timing_mae,monotonicity,f0_rmse_cents"]
        for r in list(self.rows) + [self.aggregate]:
            tag = "mean" if r.song < 0 else str(r.song)
            lines.append(",".join([tag, _f17(r.feat_loss), _f17(r.guided_loss),
                                   _f17(r.timing_mae), _f17(r.monotonicity),
                                   _f17(r.f0_rmse_cents)]))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        head = f"{'song':>6} {'feat':>10} {'guided':>10} {'mae':>8} {'mono':>7} {'f0cent':>9}"
        lines = [head, "-" * len(head)]
        for r in list(self.rows) + [self.aggregate]:
            tag = "mean" if r.song < 0 else str(r.song)
            lines.append(f"{tag:>6} {r.feat_loss:10.5f} {r.guided_loss:10.5f} "
                         f"{r.timing_mae:8.2f} {r.monotonicity:7.3f} "
                         f"{r.f0_rmse_cents:9.1f}")
        return "\n".join(lines) + "\n"


def evaluate_model(model: Model, corpus: list[tuple[Score, GroundTruth]],
                   song_offset: int = 0) -> MetricsReport:
    """Synthesize every song and score it against its ground truth."""
    cfg = model.config
    rows = []
    for i, (score, truth) in enumerate(corpus):
        oracle = None if cfg.use_attention else truth.alignment
        syn = model.synthesize(score, oracle_alignment=oracle)
        g = penalty_matrix(score, r=cfg.reduction_factor).G
        frame_align = expand_alignment(syn.alignment, cfg.reduction_factor,
                                       score.total_frames)
        rows.append(SongMetrics(
            song=song_offset + i,
            feat_loss=feature_loss(truth.frames, syn.raw_frames),
            guided_loss=guided_attention_loss(g, syn.alignment),
            timing_mae=timing_error(frame_align, score, truth.alignment),
            monotonicity=monotonicity_rate(syn.alignment),
            f0_rmse_cents=f0_rmse_cents(syn.frames[:, -2],
                                        truth_log_f0(score, truth),
                                        truth.frames[:, -1])))
    return MetricsReport(tuple(rows))


# ---------------------------------------------------------------------------
# artifact writers


def write_pgm(path: str, a: np.ndarray) -> None:
    """Alignment matrix as ASCII PGM; each column is scaled so its max is 255."""
    if a.ndim != 2:
        raise ConfigError(f"alignment must be 2-D, got dims {a.shape}")
    colmax = a.max(axis=0)
    safe = np.where(colmax > 0, colmax, 1.0)
    px = np.rint(255.0 * a / safe[None, :]).astype(int)
    n, tdec = a.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{tdec} {n}\n255\n")
        for r in range(n):
            fh.write(" ".join(str(v) for v in px[r]) + "\n")


def note_boundary_csv(score: Score, r: int) -> str:
    lines = ["note,start_frame,end_frame,start_step,end_step"]
    for i, note in enumerate(score.notes):
        lines.append(f"{i},{note.start_frame},{note.end_frame},"
                     f"{note.start_frame // r},{math.ceil(note.end_frame / r)}")
    return "\n".join(lines) + "\n"


def penalty_csv(g: np.ndarray) -> str:
    return "\n".join(",".join(_f17(v) for v in row) for row in g) + "\n"


def frames_text(frames: np.ndarray) -> str:
    t, d = frames.shape
    lines = [f"{t} {d}"]
    for row in frames:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# shared helpers


def _load_split(rc: RunConfig):
    corpus = load_corpus(rc.data_dir)
    if len(corpus) < rc.num_songs:
        raise ConfigError(
            f"{rc.data_dir} holds {len(corpus)} songs, config wants "
            f"{rc.num_songs}; re-run gen-data")
    corpus = corpus[: rc.num_songs]
    return corpus[: rc.train_songs], corpus[rc.train_songs:]


def _load_model(rc: RunConfig) -> Model:
    path = rc.checkpoint or os.path.join(rc.out_dir, "model.ckpt")
    _version, params = load_checkpoint(path)
    return Model(rc.model_config(), params)


def _song_items(rc: RunConfig, args) -> list[tuple[int, Score, GroundTruth]]:
    corpus = load_corpus(rc.data_dir)[: rc.num_songs]
    if getattr(args, "song", None) is not None:
        if not 0 <= args.song < len(corpus):
            raise ConfigError(f"song index {args.song} out of range "
                              f"(corpus has {len(corpus)})")
        picks = [args.song]
    else:
        picks = list(range(rc.train_songs, len(corpus)))
    return [(i, corpus[i][0], corpus[i][1]) for i in picks]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(rc: RunConfig, args) -> int:
    spec = rc.corpus_spec()
    out = args.out or rc.data_dir
    try:
        corpus = generate_corpus(spec)
        save_corpus(out, corpus)
    except OSError as exc:
        print(f"error: cannot write corpus to {out}: {exc}", file=sys.stderr)
        return 2
    checksum = corpus_checksum(out)
    print(f"wrote {len(corpus)} songs to {out}")
    print(f"checksum {checksum}")
    return 0


def cmd_train(rc: RunConfig, args) -> int:
    train, _test = _load_split(rc)
    os.makedirs(rc.out_dir, exist_ok=True)
    model = Model(rc.model_config())
    trainer = Trainer(model, train, lr=rc.lr, clip_norm=rc.clip_norm,
                      batch=rc.batch)
    print(f"mode {rc.mode}  lambda = {rc.guided_weight}  steps {rc.steps}  "
          f"seed {rc.seed}")
    log_path = os.path.join(rc.out_dir, "loss_log.csv")
    ckpt_path = os.path.join(rc.out_dir, "model.ckpt")
    stop = rc.stop_feat_below if rc.stop_feat_below > 0 else None
    code = 0
    try:
        for _ in range(rc.steps):
            rep = trainer.train_step()
            if trainer.step_count % rc.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model.params)
            if stop is not None and rep.feat_decoder + rep.feat_postnet < stop:
                print(f"feature loss under {stop} at step {trainer.step_count}; "
                      "stopping early")
                break
    except TrainingDiverged as exc:
        print(f"error: {exc}; last checkpoint kept at {ckpt_path}",
              file=sys.stderr)
        code = 1
    else:
        save_checkpoint(ckpt_path, model.params)
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("step,feat_dec,feat_post,guided,total\n")
        for step, fd, fp, g, total in trainer.log:
            fh.write(f"{step},{_f17(fd)},{_f17(fp)},{_f17(g)},{_f17(total)}\n")
    if trainer.log:
        last = trainer.log[-1]
        print(f"step {last[0]}: total {last[4]:.6f} "
              f"(feat {last[1]:.6f}/{last[2]:.6f} guided {last[3]:.6f})")
    print(f"loss log {log_path}")
    if code == 0:
        print(f"checkpoint {ckpt_path}")
    return code


def cmd_synth(rc: RunConfig, args) -> int:
    model = _load_model(rc)
    os.makedirs(rc.out_dir, exist_ok=True)
    for i, score, truth in _song_items(rc, args):
        oracle = None if model.config.use_attention else truth.alignment
        syn = model.synthesize(score, oracle_alignment=oracle)
        base = os.path.join(rc.out_dir, f"song_{i:04d}.syn")
        with open(base + ".feat", "w", encoding="utf-8") as fh:
            fh.write(frames_text(syn.frames))
        frame_align = expand_alignment(syn.alignment, model.config.reduction_factor,
                                       score.total_frames)
        with open(base + ".align", "w", encoding="utf-8") as fh:
            fh.write("\n".join(str(int(v)) for v in frame_align) + "\n")
        print(f"song {i}: {score.total_frames} frames -> {base}.feat")
    return 0


def cmd_eval(rc: RunConfig, args) -> int:
    model = _load_model(rc)
    _train, test = _load_split(rc)
    report = evaluate_model(model, test, song_offset=rc.train_songs)
    os.makedirs(rc.out_dir, exist_ok=True)
    csv_path = os.path.join(rc.out_dir, "metrics.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    table = report.to_table()
    with open(os.path.join(rc.out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    print(table, end="")
    print(f"report {csv_path}")
    return 0


def cmd_export_alignment(rc: RunConfig, args) -> int:
    model = _load_model(rc)
    os.makedirs(rc.out_dir, exist_ok=True)
    for i, score, truth in _song_items(rc, args):
        oracle = None if model.config.use_attention else truth.alignment
        syn = model.synthesize(score, oracle_alignment=oracle)
        pgm = os.path.join(rc.out_dir, f"alignment_{i:04d}.pgm")
        write_pgm(pgm, syn.alignment)
        csv_path = os.path.join(rc.out_dir, f"note_boundaries_{i:04d}.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(note_boundary_csv(score, model.config.reduction_factor))
        print(f"song {i}: {pgm} + {csv_path}")
    return 0


def cmd_export_penalty(rc: RunConfig, args) -> int:
    os.makedirs(rc.out_dir, exist_ok=True)
    for i, score, _truth in _song_items(rc, args):
        g = penalty_matrix(score, r=rc.reduction_factor).G
        path = os.path.join(rc.out_dir, f"penalty_{i:04d}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(penalty_csv(g))
        write_pgm(os.path.join(rc.out_dir, f"penalty_{i:04d}.pgm"), g)
        print(f"song {i}: {path} ({g.shape[0]}x{g.shape[1]})")
    return 0


def cmd_ablate(rc: RunConfig, args) -> int:
    default = ",".join(MODES)
    modes = [m.strip() for m in (args.mode or default).split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r} in ablation list")
    aggregates: list[tuple[str, SongMetrics]] = []
    for m in modes:
        sub = dataclasses.replace(rc, mode=m,
                                  out_dir=os.path.join(rc.out_dir, m))
        print(f"=== {m} ===")
        code = cmd_train(sub, args)
        if code != 0:
            return code
        model = Model(sub.model_config(),
                      load_checkpoint(os.path.join(sub.out_dir, "model.ckpt"))[1])
        _train, test = _load_split(sub)
        report = evaluate_model(model, test, song_offset=sub.train_songs)
        with open(os.path.join(sub.out_dir, "metrics.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write(report.to_csv())
        aggregates.append((m, report.aggregate))
    os.makedirs(rc.out_dir, exist_ok=True)
    merged = os.path.join(rc.out_dir, "ablation.csv")
    with open(merged, "w", encoding="utf-8") as fh:
        fh.write("mode,feat_loss,guided_loss,timing_mae,monotonicity,"
                 "f0_rmse_cents\n")
        for m, a in aggregates:
            fh.write(",".join([m, _f17(a.feat_loss), _f17(a.guided_loss),
                               _f17(a.timing_mae), _f17(a.monotonicity),
                               _f17(a.f0_rmse_cents)]) + "\n")
    head = f"{'mode':>8} {'feat':>10} {'mae':>8} {'mono':>7} {'f0cent':>9}"
    print(head)
    print("-" * len(head))
    for m, a in aggregates:
        print(f"{m:>8} {a.feat_loss:10.5f} {a.timing_mae:8.2f} "
              f"{a.monotonicity:7.3f} {a.f0_rmse_cents:9.1f}")
    print(f"merged report {merged}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="notesing",
        description="Singing-voice synthesis with note-position-aware attention")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": "generate the synthetic corpus",
        "train": "train a model on the corpus",
        "synth": "synthesize songs from a checkpoint",
        "eval": "evaluate a checkpoint on the test split",
        "export-alignment": "write alignment PGM + note-boundary CSV",
        "export-penalty": "write the guided-attention penalty matrix",
        "ablate": "train and evaluate a comma-separated list of modes",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--mode", help="system name "
                       f"({'|'.join(MODES)}); ablate takes a comma list")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="checkpoint path")
        if name in ("synth", "export-alignment", "export-penalty"):
            p.add_argument("--song", type=int,
                           help="song index (default: every test song)")
    return parser


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "export-alignment": cmd_export_alignment,
    "export-penalty": cmd_export_penalty,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = build_run_config(args)
        return _DISPATCH[args.command](rc, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, TrainingDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
