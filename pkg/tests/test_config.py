import pytest

from mltts.config import CONFIG_ENV, DIM_PRESETS, TrainingConfig, dumps_config, load_config, parse_assignments
from mltts.layers import ConfigurationError


def test_parse_assignments_types():
    out = parse_assignments(["# comment", "", "seed = 7", "learning_rate=0.1  # inline", "enable_dat = off",
                             "embed_dim = none", "optimizer = sgd"])
    assert out == dict(seed=7, learning_rate=0.1, enable_dat=False, embed_dim=None, optimizer="sgd")


@pytest.mark.parametrize("line", ["bogus = 1", "seed = abc", "enable_dat = maybe", "seed"])
def test_bad_lines_rejected(line):
    with pytest.raises(ConfigurationError):
        parse_assignments([line])


def test_file_env_and_overrides(tmp_path, monkeypatch):
    f = tmp_path / "cfg.txt"
    f.write_text("seed = 3\ntotal_steps = 12\n")
    monkeypatch.setenv(CONFIG_ENV, str(f))
    cfg = load_config(overrides=["total_steps=5"])
    assert cfg.seed == 3 and cfg.total_steps == 5
    monkeypatch.delenv(CONFIG_ENV)
    assert load_config() == TrainingConfig()


def test_dumps_round_trips(tmp_path):
    cfg = TrainingConfig(seed=9, enable_reg_loss=False, dims="paper-dims")
    f = tmp_path / "c.txt"
    f.write_text(dumps_config(cfg))
    assert load_config(f) == cfg


def test_presets_resolve():
    for name, dims in DIM_PRESETS.items():
        cfg = TrainingConfig(dims=name)
        assert all(cfg.dim(k) == v for k, v in dims.items())
    assert TrainingConfig(embed_dim=5).dim("embed_dim") == 5


@pytest.mark.parametrize("kw", [dict(dims="huge"), dict(optimizer="rmsprop"), dict(learning_rate=-1.0),
                                dict(total_steps=-1), dict(duration_source="x")])
def test_invalid_values(kw):
    with pytest.raises(ConfigurationError):
        TrainingConfig(**kw)
