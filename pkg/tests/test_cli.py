"""CLI: mode table, config precedence, commands, exit codes, artifacts."""

import os

import numpy as np
import pytest

from notesing import cli
from notesing.loss import penalty_matrix
from notesing.network import load_checkpoint
from notesing.score import load_score
from notesing.synthdata import corpus_checksum, load_corpus

# ---------------------------------------------------------------------------
# mode table (one row per named system)

MODE_TABLE = {
    # mode: (use_position, use_aux, guided on, transition, uses attention)
    "base":    (False, False, False, "full",         True),
    "nf":      (False, True,  False, "full",         True),
    "np":      (True,  False, False, "full",         True),
    "npnf":    (True,  True,  False, "full",         True),
    "prop":    (True,  True,  True,  "full",         True),
    "noatt":   (True,  True,  False, "full",         False),
    "notrans": (True,  True,  True,  "fixed_half",   True),
    "ptrans":  (True,  True,  True,  "phoneme_only", True),
    "ttrans":  (True,  True,  True,  "time_only",    True),
}


def test_mode_table_is_complete():
    assert set(MODE_TABLE) == set(cli.MODES)


@pytest.mark.parametrize("mode", sorted(MODE_TABLE))
def test_mode_toggles(mode):
    use_pos, use_aux, guided, transition, use_att = MODE_TABLE[mode]
    rc = cli.RunConfig(mode=mode, lam=7.5)
    cfg = rc.model_config()
    assert cfg.mode.use_position == use_pos
    assert cfg.use_aux == use_aux
    assert cfg.mode.transition == transition
    assert cfg.use_attention == use_att
    assert cfg.guided_weight == (7.5 if guided else 0.0)
    assert rc.guided_weight == cfg.guided_weight


# ---------------------------------------------------------------------------
# config parsing and precedence


def test_parse_config_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text(
        "# comment line\n"
        "mode = np\n"
        "steps = 42\n"
        "lambda = 2.5\n"
        "teacher_forcing = false\n"
        "\n"
        "data_dir = corpus  # trailing comment\n")
    values = cli.parse_config_file(str(f))
    assert values == {"mode": "np", "steps": 42, "lam": 2.5,
                      "teacher_forcing": False, "data_dir": "corpus"}


@pytest.mark.parametrize("line,snippet", [
    ("steps 42", ":1:"),
    ("bogus_key = 3", "bogus_key"),
    ("steps = many", "steps"),
    ("teacher_forcing = maybe", "teacher_forcing"),
])
def test_parse_config_rejects(tmp_path, line, snippet):
    f = tmp_path / "bad.cfg"
    f.write_text(line + "\n")
    with pytest.raises(cli.ConfigError, match=snippet):
        cli.parse_config_file(str(f))


def test_flag_overrides_file_overrides_default(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("steps = 42\nseed = 9\n")
    parser = cli.build_parser()
    args = parser.parse_args(["train", "--config", str(f), "--steps", "7"])
    rc = cli.build_run_config(args)
    assert rc.steps == 7          # flag wins
    assert rc.seed == 9           # file wins over default
    assert rc.mode == "prop"      # untouched default


def test_run_config_validation():
    with pytest.raises(cli.ConfigError):
        cli.RunConfig(mode="nope")
    with pytest.raises(cli.ConfigError):
        cli.RunConfig(steps=0)
    with pytest.raises(cli.ConfigError):
        cli.RunConfig(num_songs=5, train_songs=5)
    with pytest.raises(cli.ConfigError):
        cli.RunConfig(lam=-1.0)


# ---------------------------------------------------------------------------
# end-to-end pipeline on a miniature corpus


TINY = ("mode = prop\n"
        "seed = 0\n"
        "steps = 8\n"
        "num_songs = 6\n"
        "train_songs = 4\n"
        "notes_min = 2\n"
        "notes_max = 3\n"
        "encoder_dim = 8\n"
        "query_dim = 6\n"
        "attn_dim = 5\n"
        "pos_dim = 4\n"
        "loc_channels = 2\n"
        "loc_width = 5\n"
        "postnet_channels = 3\n"
        "acoustic_dim = 4\n"
        "checkpoint_every = 4\n")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, capfd_unsafe=None):
    root = tmp_path_factory.mktemp("cliws")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY + f"data_dir = {root / 'data'}\nout_dir = {root / 'out'}\n")
    assert cli.main(["gen-data", "--config", str(cfg)]) == 0
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return root, str(cfg)


def test_gen_data_writes_corpus(workspace):
    root, _cfg = workspace
    corpus = load_corpus(str(root / "data"))
    assert len(corpus) == 6
    load_score(str(root / "data" / "song_0000.score"))


def test_gen_data_checksum_printed_and_stable(workspace, capfd):
    root, cfg = workspace
    c = corpus_checksum(str(root / "data"))
    assert cli.main(["gen-data", "--config", cfg]) == 0
    out, _ = capfd.readouterr()
    assert c in out
    assert corpus_checksum(str(root / "data")) == c


def test_train_writes_checkpoint_and_log(workspace):
    root, _cfg = workspace
    version, params = load_checkpoint(str(root / "out" / "model.ckpt"))
    assert version == 1
    log = (root / "out" / "loss_log.csv").read_text().splitlines()
    assert log[0] == "step,feat_dec,feat_post,guided,total"
    assert len(log) == 1 + 8
    first = log[1].split(",")
    assert first[0] == "1"
    total = float(first[4])
    want = (float(first[1]) + float(first[2]) + 10.0 * float(first[3]))
    assert total == pytest.approx(want, rel=1e-12)


def test_train_prints_mode_and_lambda(workspace, capfd):
    root, cfg = workspace
    assert cli.main(["train", "--config", cfg, "--steps", "1",
                     "--out", str(root / "out2")]) == 0
    out, _ = capfd.readouterr()
    assert "mode prop" in out
    assert "lambda = 10.0" in out


def test_eval_metrics_csv(workspace, capfd):
    root, cfg = workspace
    assert cli.main(["eval", "--config", cfg]) == 0
    out, _ = capfd.readouterr()
    assert "song" in out  # table printed
    csv_text = (root / "out" / "metrics.csv").read_text()
    lines = csv_text.splitlines()
    assert lines[0] == "song,feat_loss,guided_loss,timing_mae,monotonicity,f0_rmse_cents"
    assert len(lines) == 1 + 2 + 1  # two test songs + aggregate
    assert lines[-1].startswith("mean,")
    # repeat evaluation writes identical bytes
    assert cli.main(["eval", "--config", cfg]) == 0
    capfd.readouterr()
    assert (root / "out" / "metrics.csv").read_text() == csv_text


def test_synth_writes_frames_and_alignment(workspace):
    root, cfg = workspace
    assert cli.main(["synth", "--config", cfg, "--song", "4"]) == 0
    feat = (root / "out" / "song_0004.syn.feat").read_text().splitlines()
    t, d = (int(v) for v in feat[0].split())
    corpus = load_corpus(str(root / "data"))
    assert (t, d) == (corpus[4][0].total_frames, 4)
    align = (root / "out" / "song_0004.syn.align").read_text().splitlines()
    assert len(align) == t


def test_export_alignment_pgm_dims(workspace):
    root, cfg = workspace
    assert cli.main(["export-alignment", "--config", cfg, "--song", "5"]) == 0
    pgm = (root / "out" / "alignment_0005.pgm").read_text().splitlines()
    assert pgm[0] == "P2"
    w, h = (int(v) for v in pgm[1].split())
    assert pgm[2] == "255"
    corpus = load_corpus(str(root / "data"))
    score = corpus[5][0]
    from notesing.score import flatten
    assert h == len(flatten(score))
    assert w == -(-score.total_frames // 3)
    rows = [row.split() for row in pgm[3:]]
    assert len(rows) == h and all(len(r) == w for r in rows)
    assert max(int(v) for row in rows for v in row) == 255
    bounds = (root / "out" / "note_boundaries_0005.csv").read_text().splitlines()
    assert bounds[0] == "note,start_frame,end_frame,start_step,end_step"
    assert len(bounds) == 1 + len(score.notes)


def test_export_penalty_matches_module(workspace):
    root, cfg = workspace
    assert cli.main(["export-penalty", "--config", cfg, "--song", "4"]) == 0
    text = (root / "out" / "penalty_0004.csv").read_text()
    corpus = load_corpus(str(root / "data"))
    g = penalty_matrix(corpus[4][0], r=3).G
    assert text == cli.penalty_csv(g)


# ---------------------------------------------------------------------------
# exit codes


def test_exit_code_bad_config_path(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_exit_code_bad_mode(tmp_path):
    assert cli.main(["train", "--mode", "bogus", "--steps", "1"]) == 2


def test_exit_code_bad_config_value(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("steps = -3\n")
    assert cli.main(["train", "--config", str(f)]) == 2


def test_exit_code_missing_checkpoint(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text(TINY + f"data_dir = {tmp_path / 'data'}\n"
                 f"out_dir = {tmp_path / 'out'}\n")
    assert cli.main(["gen-data", "--config", str(f)]) == 0
    assert cli.main(["eval", "--config", str(f)]) == 1


def test_exit_code_unwritable_data_dir():
    assert cli.main(["gen-data", "--config", None] if False else
                    ["gen-data", "--out", "/dev/null/nope"]) in (1, 2)


def test_exit_code_unknown_command():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


def test_ablate_runs_mode_list(tmp_path, capfd):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(TINY.replace("steps = 8", "steps = 2")
                   + f"data_dir = {tmp_path / 'data'}\n"
                   + f"out_dir = {tmp_path / 'out'}\n")
    assert cli.main(["gen-data", "--config", str(cfg)]) == 0
    assert cli.main(["ablate", "--config", str(cfg),
                     "--mode", "base,noatt"]) == 0
    out, _ = capfd.readouterr()
    merged = (tmp_path / "out" / "ablation.csv").read_text().splitlines()
    assert merged[0].startswith("mode,")
    assert [row.split(",")[0] for row in merged[1:]] == ["base", "noatt"]
    assert (tmp_path / "out" / "base" / "model.ckpt").exists()
    assert (tmp_path / "out" / "noatt" / "model.ckpt").exists()
    assert "base" in out and "noatt" in out
