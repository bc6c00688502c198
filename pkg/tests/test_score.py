"""Score data model, feature extraction, and file-format round trips."""

import math

import numpy as np
import pytest

from notesing import score as sc


def simple_score(tempo=120.0, frame_shift=5.0):
    # "ka"-style CV mora, a bare vowel, then a rest
    return sc.build_score(tempo, [
        (69, 1.0, [[5, 0]]),
        (72, 0.5, [[2]]),
        (None, 0.5, []),
    ], frame_shift_ms=frame_shift)


# ---------------------------------------------------------------------------
# structure


def test_frames_from_tempo():
    s = simple_score()  # 120 bpm, 5 ms -> 100 frames/beat
    assert [n.start_frame for n in s.notes] == [0, 100, 150]
    assert [n.end_frame for n in s.notes] == [100, 150, 200]
    assert s.total_frames == 200


def test_flatten_counts():
    assert len(sc.flatten(simple_score())) == 4  # k, a, a, silence

    one_cv = sc.build_score(120.0, [(60, 1.0, [[5, 0]])])
    assert len(sc.flatten(one_cv)) == 2

    two_morae = sc.build_score(120.0, [(60, 1.0, [[5, 0], [7, 2]])])
    assert len(sc.flatten(two_morae)) == 4

    vowel_rest = sc.build_score(120.0, [(60, 1.0, [[0]]), (None, 1.0, [])])
    entries = sc.flatten(vowel_rest)
    assert len(entries) == 2
    assert entries[1].phoneme.id == sc.SILENCE_ID
    assert not entries[1].phoneme.is_vowel


def test_flatten_regroups_to_score():
    s = simple_score()
    entries = sc.flatten(s)
    for ni, note in enumerate(s.notes):
        ids = [e.phoneme.id for e in entries if e.note_index == ni]
        want = ([p.id for m in note.morae for p in m.phonemes]
                if not note.is_rest else [sc.SILENCE_ID])
        assert ids == want


def test_validation_rejects_bad_scores():
    with pytest.raises(sc.ScoreError):
        sc.build_score(120.0, [])  # no notes
    with pytest.raises(sc.ScoreError):
        sc.build_score(120.0, [(60, 1.0, [[5, 7, 0]])])  # 3-phoneme mora
    with pytest.raises(sc.ScoreError):
        sc.build_score(120.0, [(60, 1.0, [[0, 5]])])  # consonant after vowel
    with pytest.raises(sc.ScoreError):
        sc.build_score(120.0, [(60, 1.0, [[5]])])  # mora without vowel
    with pytest.raises(sc.ScoreError):
        sc.build_score(120.0, [(20, 1.0, [[0]])])  # pitch outside 36..84
    with pytest.raises(sc.ScoreError):
        sc.build_score(120.0, [(None, 1.0, [])])  # all rests


# ---------------------------------------------------------------------------
# note positions


def test_note_position_triple_branches():
    # one note spanning [100,150) via a 0.5-beat lead-in rest trick
    s = sc.build_score(120.0, [(60, 1.0, [[0]]), (69, 0.5, [[1]])])
    n = 1  # the vowel of the second note, spanning [100,150)
    for t, want in [(120, (20, 30, 0)), (90, (-10, 60, 10)), (160, (60, -10, 10))]:
        p = sc.note_position_triple(s, t, n)
        assert (p.p1, p.p2, p.p3) == want


def test_note_position_invariants():
    s = simple_score()
    rng = np.random.default_rng(7)
    spans = sc.entry_note_spans(s)
    for _ in range(200):
        t = int(rng.integers(0, s.total_frames))
        n = int(rng.integers(0, len(sc.flatten(s))))
        p = sc.note_position_triple(s, t, n)
        start, end = spans[0][n], spans[1][n]
        assert p.p1 + p.p2 == end - start
        assert p.p3 >= 0
        if start <= t <= end:
            assert p.p3 == 0
        elif t < start:
            assert p.p3 == start - t
        else:
            assert p.p3 == t - end


def test_position_matrix_normalized_by_frames_per_beat():
    s = simple_score()  # 100 frames/beat
    spans = sc.entry_note_spans(s)
    triples = [sc.note_position_triple(s, 120, n) for n in range(4)]
    raw = np.array([[p.p1, p.p2, p.p3] for p in triples])
    got = sc.position_matrix(s, 120, spans)
    np.testing.assert_allclose(got, raw / 100.0)


def test_position_out_of_range():
    s = simple_score()
    with pytest.raises(sc.ScoreError):
        sc.note_position_triple(s, 0, 4)
    with pytest.raises(sc.ScoreError):
        sc.note_position_triple(s, 0, -1)


# ---------------------------------------------------------------------------
# feature matrices


def test_phoneme_features_schema():
    s = sc.build_score(120.0, [(60, 1.0, [[0]]), (None, 1.0, [])])
    f = sc.phoneme_features(s)
    assert f.shape == (2, sc.PHONEME_FEATURE_DIM)
    assert sc.PHONEME_FEATURE_DIM == sc.INVENTORY_SIZE + 7 == 22
    # vowel "a": one-hot 0, is_vowel 1, pitch (60-60)/24 = 0, length 1 beat
    assert f[0, 0] == 1.0 and f[0, 1:sc.INVENTORY_SIZE + 1].sum() == 0.0
    assert f[0, sc.INVENTORY_SIZE + 1] == 1.0  # is_vowel
    assert f[0, sc.INVENTORY_SIZE + 2] == 0.0  # normalized pitch
    assert f[0, sc.INVENTORY_SIZE + 3] == 1.0  # beats
    # rest: silence one-hot, pitch field 0
    assert f[1, sc.SILENCE_ID] == 1.0
    assert f[1, sc.INVENTORY_SIZE + 1] == 0.0
    assert f[1, sc.INVENTORY_SIZE + 2] == 0.0


def test_auxiliary_note_frames_schema():
    s = simple_score()
    a = sc.auxiliary_note_frames(s)
    assert a.shape == (s.total_frames, sc.AUX_FEATURE_DIM)
    # frame position within note: 0 at note start, ~1 at the last frame
    note = s.notes[0]
    assert a[note.start_frame, 4] == 0.0
    assert a[note.end_frame - 1, 4] == pytest.approx(1.0, abs=0.011)


# ---------------------------------------------------------------------------
# mora boundaries


def test_mora_boundaries_equal_division():
    s = sc.build_score(100.0, [(60, 0.75, [[5, 0], [1], [7, 2]])])  # 90 frames
    bands = sc.mora_boundaries(s)
    assert [(b.start_frame, b.end_frame) for b in bands] == [(0, 30), (30, 60), (60, 90)]
    assert [(b.entry_start, b.entry_stop) for b in bands] == [(0, 2), (2, 3), (3, 5)]


def test_mora_boundaries_rounding():
    # 100 frames, 3 morae -> 0,33,67,100 under round-half-up of j*L/M
    s = sc.build_score(120.0, [(60, 1.0, [[0], [1], [2]])])
    bands = sc.mora_boundaries(s)
    assert [(b.start_frame, b.end_frame) for b in bands] == [(0, 33), (33, 67), (67, 100)]


def test_mora_boundaries_tile_song():
    s = simple_score()
    bands = sc.mora_boundaries(s)
    assert bands[0].start_frame == 0
    assert bands[-1].end_frame == s.total_frames
    for a, b in zip(bands, bands[1:]):
        assert a.end_frame == b.start_frame


# ---------------------------------------------------------------------------
# pitch


def test_note_pitch_vector_values():
    s = sc.build_score(120.0, [(69, 1.0, [[0]]), (81, 1.0, [[1]]), (None, 1.0, [])])
    v = sc.note_pitch_vector(s)
    assert v[0] == pytest.approx(math.log(440.0), abs=1e-12)
    assert v[1] == pytest.approx(math.log(880.0), abs=1e-12)
    assert v[2] == v[1]  # rest holds the preceding pitch


def test_note_pitch_vector_leading_rest():
    s = sc.build_score(120.0, [(None, 1.0, []), (69, 1.0, [[0]])])
    v = sc.note_pitch_vector(s)
    assert v[0] == v[1] == pytest.approx(math.log(440.0), abs=1e-12)


def test_midi_to_log_f0():
    assert sc.midi_to_log_f0(69) == pytest.approx(math.log(440.0), abs=1e-12)
    assert sc.midi_to_log_f0(57) == pytest.approx(math.log(220.0), abs=1e-12)


# ---------------------------------------------------------------------------
# text format


def test_format_parse_round_trip():
    s = simple_score(tempo=133.3)
    text = sc.format_score(s)
    back = sc.parse_score(text)
    assert back == s
    assert sc.format_score(back) == text


def test_parse_rejects_malformed_with_line_numbers():
    good = "tempo=120 frame_shift_ms=5\nnote 69 1.0 5/0\n"
    sc.parse_score(good)
    for bad, lineno in [
        ("tempo=120\nnote 69 1.0 5/0\n", 1),          # missing frame shift
        ("tempo=120 frame_shift_ms=5\nnote 69 x 5/0\n", 2),   # bad beats
        ("tempo=120 frame_shift_ms=5\nnote 69 1.0 5/0\nbogus\n", 3),
    ]:
        with pytest.raises(sc.ScoreParseError) as exc:
            sc.parse_score(bad)
        assert f"line {lineno}" in str(exc.value)


def test_save_load_round_trip(tmp_path):
    s = simple_score()
    path = tmp_path / "song.score"
    sc.save_score(path, s)
    assert sc.load_score(path) == s
