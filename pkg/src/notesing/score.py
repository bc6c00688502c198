"""Musical score model and score-derived features.

A Score is the single source of timing truth: notes tile the song on a
frame grid derived from tempo and frame shift, each non-rest note carries
one or two morae, and each mora is an optional consonant followed by a
vowel.  Everything the network consumes (phoneme-level features, frame
level auxiliary note features, note position triples, pseudo mora
boundaries, the note pitch sequence) is computed here as pure functions
over immutable scores.

Phoneme inventory (default): ids 0-4 vowels, 5-14 consonants (5-9 voiced),
and the reserved silence id 15 used by rest entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

NUM_VOWELS = 5
INVENTORY_SIZE = 15          # ids 0..14; silence uses id INVENTORY_SIZE
SILENCE_ID = INVENTORY_SIZE
VOICED_CONSONANT_IDS = frozenset(range(5, 10))

MIDI_MIN, MIDI_MAX = 36, 84
BEATS_PER_BAR = 4.0          # bar context assumes 4/4

PHONEME_FEATURE_DIM = SILENCE_ID + 1 + 6   # see phoneme_features
AUX_FEATURE_DIM = 6                        # see auxiliary_note_frames

LOG_A4 = math.log(440.0)
LOG_2 = math.log(2.0)
SEMITONE = LOG_2 / 12.0      # one semitone in natural-log-F0 units


class ScoreError(ValueError):
    """Invalid score structure."""


class ScoreParseError(ScoreError):
    """Malformed score file; message carries the offending line number."""


@dataclass(frozen=True)
class Phoneme:
    id: int
    is_vowel: bool

    def __post_init__(self):
        if not 0 <= self.id <= SILENCE_ID:
            raise ScoreError(f"phoneme id {self.id} outside inventory [0, {SILENCE_ID}]")
        if self.is_vowel != (self.id < NUM_VOWELS):
            raise ScoreError(f"phoneme id {self.id}: is_vowel={self.is_vowel} inconsistent")

    @staticmethod
    def from_id(pid: int) -> "Phoneme":
        return Phoneme(pid, pid < NUM_VOWELS)


SILENCE = Phoneme.from_id(SILENCE_ID)


@dataclass(frozen=True)
class Mora:
    phonemes: tuple[Phoneme, ...]

    def __post_init__(self):
        if not 1 <= len(self.phonemes) <= 2:
            raise ScoreError(f"mora must have 1-2 phonemes, got {len(self.phonemes)}")
        if not self.phonemes[-1].is_vowel:
            raise ScoreError("mora must end in a vowel")
        if len(self.phonemes) == 2 and self.phonemes[0].is_vowel:
            raise ScoreError("a two-phoneme mora must start with a consonant")
        if any(p.id == SILENCE_ID for p in self.phonemes):
            raise ScoreError("silence phoneme cannot appear inside a mora")


@dataclass(frozen=True)
class Note:
    pitch: int | None            # MIDI number, or None for a rest
    beats: float
    morae: tuple[Mora, ...]
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.pitch is not None and not MIDI_MIN <= self.pitch <= MIDI_MAX:
            raise ScoreError(f"pitch {self.pitch} outside MIDI [{MIDI_MIN}, {MIDI_MAX}]")
        if self.beats <= 0:
            raise ScoreError(f"note beats must be positive, got {self.beats}")
        if self.is_rest != (len(self.morae) == 0):
            raise ScoreError("morae must be empty iff the note is a rest")
        if self.start_frame < 0 or self.end_frame <= self.start_frame:
            raise ScoreError(f"bad frame extent [{self.start_frame}, {self.end_frame})")

    @property
    def is_rest(self) -> bool:
        return self.pitch is None

    @property
    def duration_frames(self) -> int:
        return self.end_frame - self.start_frame


@dataclass(frozen=True)
class Score:
    notes: tuple[Note, ...]
    tempo_bpm: float
    frame_shift_ms: float = 5.0

    def __post_init__(self):
        if self.tempo_bpm <= 0 or self.frame_shift_ms <= 0:
            raise ScoreError("tempo and frame shift must be positive")
        if not self.notes:
            raise ScoreError("score has no notes")
        if all(n.is_rest for n in self.notes):
            raise ScoreError("score must contain at least one non-rest note")
        pos = 0
        for i, n in enumerate(self.notes):
            if n.start_frame != pos:
                raise ScoreError(f"note {i} starts at {n.start_frame}, expected {pos}")
            pos = n.end_frame

    @property
    def total_frames(self) -> int:
        return self.notes[-1].end_frame

    @property
    def frames_per_beat(self) -> float:
        return 60000.0 / (self.tempo_bpm * self.frame_shift_ms)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_score(
    tempo_bpm: float,
    note_specs: Sequence[tuple[int | None, float, Sequence[Sequence[int]]]],
    frame_shift_ms: float = 5.0,
) -> Score:
    """Assemble a Score from (pitch, beats, morae-as-id-lists) triples.

    Frame extents are derived from the tempo: each note gets
    round(beats * 60000 / (bpm * frame_shift_ms)) frames and notes tile
    the song without gaps.
    """
    fpb = 60000.0 / (tempo_bpm * frame_shift_ms)
    notes = []
    pos = 0
    for pitch, beats, mora_ids in note_specs:
        frames = _round_half_up(beats * fpb)
        if frames < 1:
            raise ScoreError(f"note of {beats} beats rounds to zero frames at {tempo_bpm} bpm")
        morae = tuple(Mora(tuple(Phoneme.from_id(pid) for pid in ids)) for ids in mora_ids)
        notes.append(Note(pitch, beats, morae, pos, pos + frames))
        pos += frames
    return Score(tuple(notes), tempo_bpm, frame_shift_ms)


# ---------------------------------------------------------------------------
# flattening / positions


@dataclass(frozen=True)
class PhonemeEntry:
    phoneme: Phoneme
    note_index: int
    mora_index_global: int       # counts rest pseudo-morae too
    position_in_mora: int


@dataclass(frozen=True)
class NotePositionTriple:
    p1: float                    # t - s_n
    p2: float                    # e_n - t
    p3: float                    # distance outside the note, 0 inside


def flatten(score: Score) -> list[PhonemeEntry]:
    """Phoneme entries in temporal order; a rest contributes one silence entry."""
    entries: list[PhonemeEntry] = []
    mora_idx = 0
    for ni, note in enumerate(score.notes):
        if note.is_rest:
            entries.append(PhonemeEntry(SILENCE, ni, mora_idx, 0))
            mora_idx += 1
            continue
        for mora in note.morae:
            for pi, ph in enumerate(mora.phonemes):
                entries.append(PhonemeEntry(ph, ni, mora_idx, pi))
            mora_idx += 1
    return entries


def entry_note_spans(score: Score) -> tuple[np.ndarray, np.ndarray]:
    """(s_n, e_n) of the owning note for every phoneme entry, as int arrays."""
    starts, ends = [], []
    for e in flatten(score):
        note = score.notes[e.note_index]
        starts.append(note.start_frame)
        ends.append(note.end_frame)
    return np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64)


def note_position_triple(score: Score, t: float, n: int) -> NotePositionTriple:
    """Raw note position representation of decoder frame t versus entry n.

    p1 = t - s_n, p2 = e_n - t, and p3 is the piecewise distance outside
    [s_n, e_n] (s_n - t before the note, 0 inside, t - e_n past it); all in
    frames.  Divide by frames-per-beat before embedding.
    """
    entries = flatten(score)
    if not 0 <= n < len(entries):
        raise ScoreError(f"entry index {n} outside [0, {len(entries)})")
    note = score.notes[entries[n].note_index]
    s, e = note.start_frame, note.end_frame
    if t < s:
        p3 = s - t
    elif t <= e:
        p3 = 0.0
    else:
        p3 = t - e
    return NotePositionTriple(float(t - s), float(e - t), float(p3))


def position_matrix(score: Score, t: float, spans=None, normalized: bool = True) -> np.ndarray:
    """N x 3 matrix of (p1, p2, p3) for every entry at decoder frame t.

    With normalized=True the values are in beats (divided by
    frames-per-beat) so the embedding is tempo-invariant.
    """
    s, e = entry_note_spans(score) if spans is None else spans
    p1 = t - s.astype(np.float64)
    p2 = e.astype(np.float64) - t
    p3 = np.maximum(np.maximum(s - t, t - e), 0.0).astype(np.float64)
    out = np.stack([p1, p2, p3], axis=1)
    if normalized:
        out /= score.frames_per_beat
    return out


# ---------------------------------------------------------------------------
# feature extraction


def phoneme_features(score: Score) -> np.ndarray:
    """Phoneme-level score feature matrix of dims N x (P + 7).

    Per entry: one-hot phoneme id over P+1 slots (silence included),
    is_vowel flag, normalized note pitch ((midi - 60) / 24, 0 for rests),
    note length in beats, mora count of the note, position of the phoneme
    in its mora and of the mora within its note.
    """
    entries = flatten(score)
    out = np.zeros((len(entries), PHONEME_FEATURE_DIM))
    mora_in_note: dict[int, int] = {}
    for ni, note in enumerate(score.notes):
        mora_in_note[ni] = len(note.morae)
    # recover the mora index within the note by counting from the note start
    note_first_mora: dict[int, int] = {}
    for i, e in enumerate(entries):
        if e.note_index not in note_first_mora:
            note_first_mora[e.note_index] = e.mora_index_global
        note = score.notes[e.note_index]
        out[i, e.phoneme.id] = 1.0
        out[i, SILENCE_ID + 1] = float(e.phoneme.is_vowel)
        out[i, SILENCE_ID + 2] = 0.0 if note.is_rest else (note.pitch - 60) / 24.0
        out[i, SILENCE_ID + 3] = note.beats
        out[i, SILENCE_ID + 4] = mora_in_note[e.note_index] if not note.is_rest else 0.0
        out[i, SILENCE_ID + 5] = e.position_in_mora
        out[i, SILENCE_ID + 6] = e.mora_index_global - note_first_mora[e.note_index]
    return out


def auxiliary_note_frames(score: Score) -> np.ndarray:
    """Frame-level auxiliary note features, dims T x 6.

    Note-level context of the owning note (normalized pitch, length in
    beats, beat position within a 4/4 bar, mora count) plus the relative
    frame position within the note and the note duration in beats.
    """
    t_total = score.total_frames
    out = np.zeros((t_total, AUX_FEATURE_DIM))
    fpb = score.frames_per_beat
    beat_pos = 0.0
    for note in score.notes:
        s, e = note.start_frame, note.end_frame
        pitch = 0.0 if note.is_rest else (note.pitch - 60) / 24.0
        frames = np.arange(s, e)
        out[s:e, 0] = pitch
        out[s:e, 1] = note.beats
        out[s:e, 2] = (beat_pos % BEATS_PER_BAR) / BEATS_PER_BAR
        out[s:e, 3] = 0.0 if note.is_rest else len(note.morae)
        out[s:e, 4] = (frames - s) / (e - s)
        out[s:e, 5] = note.duration_frames / fpb
        beat_pos += note.beats
    return out


# ---------------------------------------------------------------------------
# mora boundaries and pitch


@dataclass(frozen=True)
class MoraBand:
    start_frame: int
    end_frame: int
    entry_start: int             # first flat entry index owned by this mora
    entry_stop: int              # one past the last
    note_index: int


def mora_boundaries(score: Score) -> list[MoraBand]:
    """Pseudo mora boundaries: equal division of each note by its mora count.

    Mora j of an L-frame note starting at s occupies
    [s + round(j*L/M), s + round((j+1)*L/M)); a rest is one pseudo-mora
    covering the whole rest.  Bands tile [0, T).
    """
    bands: list[MoraBand] = []
    entry_idx = 0
    for ni, note in enumerate(score.notes):
        s, length = note.start_frame, note.duration_frames
        if note.is_rest:
            bands.append(MoraBand(s, note.end_frame, entry_idx, entry_idx + 1, ni))
            entry_idx += 1
            continue
        m = len(note.morae)
        for j, mora in enumerate(note.morae):
            b0 = s + _round_half_up(j * length / m)
            b1 = s + _round_half_up((j + 1) * length / m)
            k = len(mora.phonemes)
            bands.append(MoraBand(b0, b1, entry_idx, entry_idx + k, ni))
            entry_idx += k
    return bands


def midi_to_log_f0(midi: int) -> float:
    return LOG_A4 + ((midi - 69) / 12.0) * LOG_2


def note_pitch_vector(score: Score) -> np.ndarray:
    """Log-F0 of the owning note per phoneme entry (length N).

    Rest entries hold the nearest preceding non-rest pitch for continuity;
    a leading rest takes the first following pitch instead.
    """
    entries = flatten(score)
    out = np.empty(len(entries))
    held = None
    for i, e in enumerate(entries):
        note = score.notes[e.note_index]
        if not note.is_rest:
            held = midi_to_log_f0(note.pitch)
        if held is None:
            nxt = next(n for n in score.notes[e.note_index:] if not n.is_rest)
            out[i] = midi_to_log_f0(nxt.pitch)
        else:
            out[i] = held
    return out


# ---------------------------------------------------------------------------
# text format


def format_score(score: Score) -> str:
    """Serialize: header line, then one `note <midi|R> <beats> <morae>` per note."""
    lines = [f"tempo={score.tempo_bpm} frame_shift_ms={score.frame_shift_ms}"]
    for note in score.notes:
        pitch = "R" if note.is_rest else str(note.pitch)
        if note.is_rest:
            morae = "-"
        else:
            morae = ";".join("/".join(str(p.id) for p in m.phonemes) for m in note.morae)
        lines.append(f"note {pitch} {note.beats} {morae}")
    return "\n".join(lines) + "\n"


def parse_score(text: str) -> Score:
    """Parse the score text format; malformed lines raise with their number."""
    lines = text.splitlines()
    header = None
    specs: list[tuple[int | None, float, list[list[int]]]] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            parts = dict(
                kv.split("=", 1) for kv in line.split() if "=" in kv
            )
            if set(parts) != {"tempo", "frame_shift_ms"} or len(line.split()) != 2:
                raise ScoreParseError(
                    f"line {lineno}: expected 'tempo=<bpm> frame_shift_ms=<float>', got {raw!r}")
            try:
                header = (float(parts["tempo"]), float(parts["frame_shift_ms"]))
            except ValueError:
                raise ScoreParseError(f"line {lineno}: non-numeric header values in {raw!r}")
            continue
        fields = line.split()
        if len(fields) != 4 or fields[0] != "note":
            raise ScoreParseError(
                f"line {lineno}: expected 'note <midi|R> <beats> <morae>', got {raw!r}")
        _, pitch_s, beats_s, morae_s = fields
        try:
            pitch = None if pitch_s == "R" else int(pitch_s)
            beats = float(beats_s)
        except ValueError:
            raise ScoreParseError(f"line {lineno}: bad pitch or beats in {raw!r}")
        if pitch is None:
            if morae_s != "-":
                raise ScoreParseError(f"line {lineno}: rest note must use '-' for morae")
            morae: list[list[int]] = []
        else:
            if morae_s == "-":
                raise ScoreParseError(f"line {lineno}: non-rest note has no morae")
            try:
                morae = [[int(p) for p in m.split("/")] for m in morae_s.split(";")]
            except ValueError:
                raise ScoreParseError(f"line {lineno}: bad morae field {morae_s!r}")
        specs.append((pitch, beats, morae))
    if header is None:
        raise ScoreParseError("line 1: missing header line")
    if not specs:
        raise ScoreParseError("line 1: score has no notes")
    try:
        return build_score(header[0], specs, frame_shift_ms=header[1])
    except ScoreError as exc:
        raise ScoreParseError(str(exc)) from exc


def load_score(path) -> Score:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_score(fh.read())


def save_score(path, score: Score) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_score(score))
