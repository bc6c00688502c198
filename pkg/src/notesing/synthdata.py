"""Procedural singing corpus with known alignments and feature oracle.

Each generated song is a random melody whose ground-truth alignment mimics
how singers realize a score: vowel onsets sit near the nominal mora
boundaries but the whole vocal onset of a note is shifted a few frames
early (vocal timing deviation), consonants take roughly note-independent
time just before their vowel, and vowels absorb whatever remains of the
note.  The acoustic oracle then renders deterministic per-phoneme timbre
prototypes, a log-F0 residual made of per-note detune plus vibrato on
vowels, and a voiced/unvoiced flag, so a correctly aligned model can drive
the feature loss to the noise floor.

Also home to the alignment-quality metrics used by evaluation.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .score import (
    NUM_VOWELS,
    SEMITONE,
    SILENCE_ID,
    VOICED_CONSONANT_IDS,
    Score,
    build_score,
    flatten,
    format_score,
    load_score,
    mora_boundaries,
    note_pitch_vector,
)

CENT = math.log(2.0) / 1200.0
VIBRATO_HZ = 5.0
VIBRATO_CENTS = 20.0
DETUNE_CENTS = 30.0
# the logF0 residual channel is stored in semitones so its numeric range is
# comparable to the timbre channels; multiply by SEMITONE for log units
RESIDUAL_UNIT = SEMITONE


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    num_songs: int = 70
    notes_min: int = 7
    notes_max: int = 10
    tempo_min: float = 110.0
    tempo_max: float = 180.0
    pitch_min: int = 57
    pitch_max: int = 74
    pitch_step_max: int = 1              # melody moves at most this many semitones
    mora_two_prob: float = 0.6           # chance a note carries 2 morae
    consonant_prob: float = 0.7          # chance a mora opens with a consonant
    consonant_frames_mean: float = 4.0
    consonant_frames_std: float = 1.5
    timing_shift_mean: float = 4.0       # vocal onset deviation, frames early
    timing_shift_std: float = 0.5
    rest_prob: float = 0.1
    beat_choices: tuple[float, ...] = (0.25, 0.5)
    noise_std: float = 0.1
    acoustic_dim: int = 8
    frame_shift_ms: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.num_songs < 1 or self.notes_min < 1 or self.notes_max < self.notes_min:
            raise CorpusError("empty song or note-count range")
        if self.tempo_max < self.tempo_min or self.pitch_max < self.pitch_min:
            raise CorpusError("empty tempo or pitch range")
        if self.consonant_frames_mean < 2:
            raise CorpusError("consonant_frames_mean must be >= 2")
        if self.acoustic_dim < 3:
            raise CorpusError("acoustic_dim must be >= 3 (timbre + logF0 residual + V/UV)")
        if not self.beat_choices:
            raise CorpusError("beat_choices must be non-empty")


@dataclass
class GroundTruth:
    """Frame-level truth: entry index per frame plus oracle features."""

    alignment: np.ndarray        # (T,) int, non-decreasing, onto all entries
    frames: np.ndarray           # (T, D)

    def __post_init__(self):
        if np.any(np.diff(self.alignment) < 0):
            raise CorpusError("ground-truth alignment must be non-decreasing")
        if self.frames.shape[0] != self.alignment.shape[0]:
            raise CorpusError("alignment and frames disagree on T")


# ---------------------------------------------------------------------------
# generation


def _phoneme_weights(n: int) -> np.ndarray:
    """Zipf-like draw weights: a few phonemes dominate, as in real lyrics."""
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def _consonant_duration(spec: CorpusSpec, pid: int) -> int:
    """Consonant length in frames, a fixed property of the phoneme id.

    Real consonant classes differ systematically in length (a plosive is
    short, a fricative long), which is what lets a content-aware aligner
    beat a pure clock.  The per-id offsets are drawn once from the corpus
    seed so the mapping is stable across songs.
    """
    z = np.random.default_rng(
        np.random.SeedSequence((spec.seed, 7013, pid))).standard_normal()
    lo = 2 if spec.consonant_frames_mean < 3 else 3
    hi = spec.consonant_frames_mean + 2.0 * spec.consonant_frames_std
    d = spec.consonant_frames_mean + spec.consonant_frames_std * z
    return int(np.clip(round(d), lo, round(hi)))


def _sample_song(spec: CorpusSpec, rng: np.random.Generator) -> Score:
    n_notes = int(rng.integers(spec.notes_min, spec.notes_max + 1))
    tempo = round(float(rng.uniform(spec.tempo_min, spec.tempo_max)), 1)
    pitch = int(rng.integers(spec.pitch_min, spec.pitch_max + 1))
    # each song draws a small lyric inventory, so phonemes repeat a lot
    # within a song (as words do) and content alone cannot identify a note
    n_cons = SILENCE_ID - NUM_VOWELS
    cons_pool = rng.choice(np.arange(NUM_VOWELS, SILENCE_ID), size=4,
                           replace=False, p=_phoneme_weights(n_cons))
    vowel_pool = rng.choice(NUM_VOWELS, size=3, replace=False,
                            p=_phoneme_weights(NUM_VOWELS))
    specs = []
    for _ in range(n_notes):
        beats = float(rng.choice(np.asarray(spec.beat_choices)))
        if rng.random() < spec.rest_prob:
            specs.append((None, beats, []))
            continue
        step = spec.pitch_step_max
        pitch = int(np.clip(pitch + rng.integers(-step, step + 1),
                            spec.pitch_min, spec.pitch_max))
        morae = []
        n_morae = 2 if rng.random() < spec.mora_two_prob else 1
        for _ in range(n_morae):
            ids = []
            if rng.random() < spec.consonant_prob:
                ids.append(int(rng.choice(cons_pool, p=_phoneme_weights(4))))
            ids.append(int(rng.choice(vowel_pool, p=_phoneme_weights(3))))
            morae.append(ids)
        specs.append((pitch, beats, morae))
    if all(p is None for p, _, _ in specs):
        specs[0] = (pitch, specs[0][1], [[0]])
    return build_score(tempo, specs, frame_shift_ms=spec.frame_shift_ms)


def _truth_alignment(score: Score, spec: CorpusSpec, rng: np.random.Generator
                     ) -> np.ndarray | None:
    """Entry index per frame, or None if the sampled timings are infeasible."""
    entries = flatten(score)
    bands = mora_boundaries(score)
    t_total = score.total_frames
    starts = np.zeros(len(entries), dtype=np.int64)
    note_shift: dict[int, int] = {}
    for band in bands:
        note = score.notes[band.note_index]
        if note.is_rest:
            starts[band.entry_start] = band.start_frame
            continue
        if band.note_index not in note_shift:
            d = rng.normal(spec.timing_shift_mean, spec.timing_shift_std)
            note_shift[band.note_index] = max(0, int(round(d)))
        vowel_on = band.start_frame - note_shift[band.note_index]
        if band.entry_stop - band.entry_start == 2:
            c = _consonant_duration(spec, entries[band.entry_start].phoneme.id)
            starts[band.entry_start] = vowel_on - c
            starts[band.entry_start + 1] = vowel_on
        else:
            starts[band.entry_start] = vowel_on
    starts[0] = 0
    for i in range(1, len(starts)):
        starts[i] = max(starts[i], starts[i - 1] + 1)
    if starts[-1] >= t_total:
        return None
    align = np.empty(t_total, dtype=np.int64)
    ends = np.append(starts[1:], t_total)
    for i, (s, e) in enumerate(zip(starts, ends)):
        if e <= s:
            return None
        align[s:e] = i
    return align


def _phoneme_prototype(seed: int, pid: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7001, pid)))
    return rng.uniform(-1.0, 1.0, size=dim)


def oracle_features(score: Score, alignment: np.ndarray, spec: CorpusSpec,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Deterministic acoustic features for a truth alignment, dims T x D.

    Timbre is the per-phoneme prototype (a pure function of phoneme id and
    corpus seed) plus Gaussian noise; the log-F0 residual channel carries
    per-note detune and a vibrato sine on vowel frames, stored in
    semitones; the last channel is the V/UV flag.  Pass the generating rng
    for corpus-reproducible noise.
    """
    entries = flatten(score)
    if alignment.shape[0] != score.total_frames:
        raise CorpusError("alignment does not cover the score's frames")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 7002)))
    d = spec.acoustic_dim
    t_total = score.total_frames
    out = np.zeros((t_total, d))
    detune = {}
    for ni, note in enumerate(score.notes):
        # deterministic per-note detune keyed to pitch: varies across notes,
        # bounded +/-30 cents, and recoverable from score features alone
        detune[ni] = (0.0 if note.is_rest
                      else DETUNE_CENTS * math.sin(0.9 * note.pitch))
    protos = {pid: _phoneme_prototype(spec.seed, pid, d - 2)
              for pid in range(SILENCE_ID + 1)}
    omega = 2.0 * math.pi * VIBRATO_HZ * spec.frame_shift_ms / 1000.0
    vowel_onset = -1
    prev_entry = -1
    for t in range(t_total):
        ei = int(alignment[t])
        e = entries[ei]
        ph = e.phoneme
        out[t, : d - 2] = protos[ph.id]
        if ph.id == SILENCE_ID:
            residual = 0.0
            vuv = 0.0
        else:
            residual = detune[e.note_index] / 100.0
            vuv = 1.0 if (ph.is_vowel or ph.id in VOICED_CONSONANT_IDS) else 0.0
            if ph.is_vowel:
                if ei != prev_entry:
                    vowel_onset = t
                residual += (VIBRATO_CENTS / 100.0) * math.sin(omega * (t - vowel_onset))
        out[t, d - 2] = residual
        out[t, d - 1] = vuv
        prev_entry = ei
    if spec.noise_std > 0:
        out[:, : d - 2] += rng.normal(0.0, spec.noise_std, size=(t_total, d - 2))
    return out


def generate_corpus(spec: CorpusSpec) -> list[tuple[Score, GroundTruth]]:
    """Reproducible corpus: same spec (and seed) gives identical songs."""
    root = np.random.SeedSequence(spec.seed)
    out = []
    for song_ss in root.spawn(spec.num_songs):
        rng = np.random.default_rng(song_ss)
        align = None
        score = None
        for _ in range(100):
            score = _sample_song(spec, rng)
            align = _truth_alignment(score, spec, rng)
            if align is not None:
                break
        if align is None:
            raise CorpusError(
                "could not realize a song in 100 attempts; notes too short "
                "for their morae and consonants under this spec")
        frames = oracle_features(score, align, spec, rng=rng)
        out.append((score, GroundTruth(align, frames)))
    return out


# ---------------------------------------------------------------------------
# metrics


def expand_alignment(a: np.ndarray, r: int, t_total: int) -> np.ndarray:
    """Argmax path of an N x Tdec alignment matrix at frame resolution."""
    am = np.argmax(a, axis=0)
    return np.repeat(am, r)[:t_total]


def monotonicity_rate(a: np.ndarray) -> float:
    """Fraction of adjacent argmax steps that stay or advance by one."""
    am = np.argmax(a, axis=0)
    if am.size < 2:
        return 1.0
    deltas = np.diff(am)
    return float(np.mean((deltas == 0) | (deltas == 1)))


def mora_onsets(frame_alignment: np.ndarray, score: Score) -> np.ndarray:
    """First frame whose entry belongs to each (pseudo) mora; missing -> T."""
    bands = mora_boundaries(score)
    t_total = frame_alignment.shape[0]
    onsets = np.full(len(bands), t_total, dtype=np.int64)
    for bi, band in enumerate(bands):
        hit = np.nonzero((frame_alignment >= band.entry_start)
                         & (frame_alignment < band.entry_stop))[0]
        if hit.size:
            onsets[bi] = hit[0]
    return onsets


def timing_error(pred_alignment: np.ndarray, score: Score,
                 truth_alignment: np.ndarray) -> float:
    """Mean absolute mora-onset error in frames.

    Both alignments are frame-level entry indices (expand a decoder-step
    matrix with expand_alignment first).  A mora the prediction never
    reaches counts with onset T; a non-monotone prediction is still scored.
    """
    pred = mora_onsets(pred_alignment, score)
    truth = mora_onsets(truth_alignment, score)
    return float(np.mean(np.abs(pred - truth)))


def f0_rmse_cents(pred_logf0: np.ndarray, truth_logf0: np.ndarray,
                  voiced: np.ndarray) -> float:
    """RMSE in cents over frames where the truth V/UV flag is >= 0.5."""
    mask = voiced >= 0.5
    if not mask.any():
        return 0.0
    d = (pred_logf0[mask] - truth_logf0[mask]) / CENT
    return float(np.sqrt(np.mean(d * d)))


def truth_log_f0(score: Score, truth: GroundTruth) -> np.ndarray:
    """Absolute log-F0 per frame implied by the truth alignment and residual."""
    pitch = note_pitch_vector(score)
    return pitch[truth.alignment] + truth.frames[:, -2] * RESIDUAL_UNIT


# ---------------------------------------------------------------------------
# corpus files


def _feat_path(root: str, i: int) -> str:
    return os.path.join(root, f"song_{i:04d}.feat")


def save_corpus(root: str, corpus: list[tuple[Score, GroundTruth]]) -> None:
    os.makedirs(root, exist_ok=True)
    for i, (score, truth) in enumerate(corpus):
        with open(os.path.join(root, f"song_{i:04d}.score"), "w", encoding="utf-8") as fh:
            fh.write(format_score(score))
        t, d = truth.frames.shape
        with open(_feat_path(root, i), "w", encoding="utf-8") as fh:
            fh.write(f"{t} {d}\n")
            for row in truth.frames:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        with open(os.path.join(root, f"song_{i:04d}.align"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(str(int(v)) for v in truth.alignment) + "\n")


def load_frames(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        t, d = int(header[0]), int(header[1])
        out = np.loadtxt(fh, ndmin=2)
    if out.shape != (t, d):
        raise CorpusError(f"{path}: header says {t}x{d}, data is {out.shape}")
    return out


def load_corpus(root: str) -> list[tuple[Score, GroundTruth]]:
    names = sorted(f for f in os.listdir(root) if re.fullmatch(r"song_\d{4}\.score", f))
    if not names:
        raise CorpusError(f"no song_NNNN.score files under {root}")
    out = []
    for name in names:
        i = int(name[5:9])
        score = load_score(os.path.join(root, name))
        frames = load_frames(_feat_path(root, i))
        align = np.loadtxt(os.path.join(root, f"song_{i:04d}.align"), dtype=np.int64)
        out.append((score, GroundTruth(np.atleast_1d(align), frames)))
    return out


def corpus_checksum(root: str) -> str:
    """SHA-256 over all corpus files (names and bytes) in sorted order."""
    h = hashlib.sha256()
    for name in sorted(os.listdir(root)):
        if not re.fullmatch(r"song_\d{4}\.(score|feat|align)", name):
            continue
        h.update(name.encode())
        with open(os.path.join(root, name), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()
