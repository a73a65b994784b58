import json
import subprocess
import sys

import pytest

from mltts.checkpoint import load_checkpoint, load_checkpoint_state
from mltts.cli import cli
from mltts.corpus import save_corpus

from conftest import TINY_CORPUS, TINY_DIMS

TINY_SET = [f"{k}={v}" for k, v in dict(TINY_DIMS, batch_size=4, ddp_layers=1, classifier_layers=1).items()]


def _set_args(pairs):
    return [a for p in pairs for a in ("--set", p)]


@pytest.fixture
def corpus_file(tmp_path, tiny_corpus):
    path = tmp_path / "corpus.jsonl"
    save_corpus(tiny_corpus, path)
    return path


@pytest.fixture
def trained(tmp_path, corpus_file):
    out = tmp_path / "run"
    assert cli(["train", "--corpus", str(corpus_file), "--out", str(out), "--steps", "3", *_set_args(TINY_SET)]) == 0
    return out


def test_mas_fixed_instance(tmp_path, capsys):
    f = tmp_path / "s.csv"
    f.write_text("0,-1,-5\n-5,-2,0\n")
    assert cli(["mas", str(f)]) == 0
    assert capsys.readouterr().out == "2,1\n"
    assert cli(["mas", str(f), "--backend", "numpy", "--out", str(tmp_path / "d.csv")]) == 0
    assert (tmp_path / "d.csv").read_text() == "2,1\n"


def test_mas_infeasible_is_user_error(tmp_path, capsys):
    f = tmp_path / "s.csv"
    f.write_text("0\n0\n")
    assert cli(["mas", str(f)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("mltts: error:") and err.count("\n") == 1


def test_train_zero_steps(tmp_path, corpus_file):
    out = tmp_path / "z"
    assert cli(["train", "--corpus", str(corpus_file), "--out", str(out), "--steps", "0", *_set_args(TINY_SET)]) == 0
    assert (out / "loss.csv").read_text().count("\n") == 1
    ck = load_checkpoint_state(out / "final.ckpt")
    assert ck.step == 0


def test_train_outputs(trained):
    lines = (trained / "loss.csv").read_text().splitlines()
    assert len(lines) == 4
    assert load_checkpoint_state(trained / "final.ckpt").step == 3
    assert "total_steps = 3" in (trained / "config.txt").read_text()


def test_train_rerun_byte_identical(tmp_path, corpus_file, trained):
    again = tmp_path / "again"
    cli(["train", "--corpus", str(corpus_file), "--out", str(again), "--steps", "3", *_set_args(TINY_SET)])
    for name in ("loss.csv", "final.ckpt"):
        assert (again / name).read_bytes() == (trained / name).read_bytes()


def test_periodic_checkpoints_and_resume(tmp_path, corpus_file):
    full = tmp_path / "full"
    args = ["train", "--corpus", str(corpus_file), *_set_args(TINY_SET + ["checkpoint_every=2"])]
    assert cli([*args, "--out", str(full), "--steps", "4"]) == 0
    assert (full / "checkpoint-000002.ckpt").exists() and (full / "checkpoint-000004.ckpt").exists()

    part = tmp_path / "part"
    assert cli([*args, "--out", str(part), "--steps", "4"]) == 0
    rows = (part / "loss.csv").read_text().splitlines()
    (part / "loss.csv").write_text("\n".join(rows[:3]) + "\n")
    assert cli(["train", "--corpus", str(corpus_file), "--out", str(part),
                "--resume", str(part / "checkpoint-000002.ckpt")]) == 0
    assert (part / "loss.csv").read_bytes() == (full / "loss.csv").read_bytes()


def test_resume_rejects_overrides(tmp_path, corpus_file, trained, capsys):
    code = cli(["train", "--corpus", str(corpus_file), "--out", str(tmp_path / "r"),
                "--resume", str(trained / "final.ckpt"), "--steps", "9"])
    assert code == 1
    assert "--resume" in capsys.readouterr().err


def test_synth(tmp_path, trained):
    out = tmp_path / "syn"
    assert cli(["synth", "--checkpoint", str(trained / "final.ckpt"), "--phonemes", "5,6,7",
                "--language", "1", "--speaker", "0", "--out", str(out)]) == 0
    d = [int(x) for x in (out / "durations.csv").read_text().strip().split(",")]
    frames = (out / "frames.csv").read_text().splitlines()
    assert len(d) == 3
    assert len(frames) == sum(d) + 1
    assert frames[0].split(",") == [f"f{i}" for i in range(TINY_CORPUS["feature_dim"])]


def test_synth_unknown_speaker(tmp_path, trained, capsys):
    code = cli(["synth", "--checkpoint", str(trained / "final.ckpt"), "--phonemes", "0",
                "--language", "0", "--speaker", "99", "--out", str(tmp_path / "x")])
    assert code == 1
    assert capsys.readouterr().err.count("\n") == 1


def test_eval_json(tmp_path, corpus_file, trained):
    out = tmp_path / "m.json"
    assert cli(["eval", "--checkpoint", str(trained / "final.ckpt"), "--corpus", str(corpus_file),
                "--texts", "2", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["duration_consistency_max_dev"] == 0.0
    assert set(report) >= {"scatter_ratio", "speaker_probe_accuracy", "per_language_duration_means", "flags"}


def test_dump_shape(trained, capsys):
    assert cli(["dump", "--checkpoint", str(trained / "final.ckpt")]) == 0
    rows = capsys.readouterr().out.splitlines()
    model = load_checkpoint(trained / "final.ckpt")
    hidden = model.hidden_speaker_representations().shape[1]
    assert len(rows) == 1 + model.corpus_spec.num_speakers
    assert all(len(r.split(",")) == hidden + 2 for r in rows)
    assert [int(r.split(",")[1]) for r in rows[1:]] == list(model.speaker_languages)


def test_ablate(tmp_path, corpus_file, capsys):
    out = tmp_path / "a.json"
    assert cli(["ablate", "--corpus", str(corpus_file), "--steps", "2", *_set_args(TINY_SET),
                "--variant", "", "--variant", "enable_dat=off", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert "scatter_ratio" in capsys.readouterr().err
    assert json.dumps(data).count("enable_dat=off") >= 1


def test_corpus_generate_and_validate(tmp_path, capsys):
    path = tmp_path / "c.jsonl"
    sets = [a for k, v in TINY_CORPUS.items() for a in ("--set", f"{k}={v}")]
    assert cli(["corpus", "generate", "--out", str(path), "--seed", "5", *sets]) == 0
    first = path.read_bytes()
    assert cli(["corpus", "generate", "--out", str(path), "--seed", "5", *sets]) == 0
    assert path.read_bytes() == first
    assert cli(["corpus", "validate", str(path)]) == 0
    assert "ok:" in capsys.readouterr().out


def test_corpus_validate_garbage(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text("not json\n")
    assert cli(["corpus", "validate", str(path)]) == 1
    assert capsys.readouterr().err.startswith("mltts: error:")


@pytest.mark.parametrize("argv", [["frobnicate"], ["mas"], ["train", "--out", "x", "--bogus"], []])
def test_usage_errors_exit_2(argv, capsys):
    assert cli(argv) == 2


def test_unknown_config_key_exit_1(tmp_path, capsys):
    assert cli(["train", "--out", str(tmp_path / "o"), "--set", "nope=1"]) == 1
    err = capsys.readouterr().err
    assert "nope" in err and err.count("\n") == 1


def test_console_entry_point(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("0,-1,-5\n-5,-2,0\n")
    proc = subprocess.run([sys.executable, "-m", "mltts.cli", "mas", str(f)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "2,1\n"
    proc = subprocess.run([sys.executable, "-m", "mltts.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
