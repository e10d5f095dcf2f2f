import pytest

from sbnet.config import DEFAULTS, RunConfig, parse_override
from sbnet.errors import ConfigError


def test_defaults_follow_training_recipe():
    cfg = RunConfig.from_dict()
    assert (cfg["batch_size"], cfg["epochs"], cfg["optim"]["lr0"]) == (128, 50, 1e-5)
    assert cfg["eval"]["gallery_sizes"] == [2, 4, 6, 8, 10]


def test_yaml_file_and_overrides(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("variant: two\nloss:\n  loss: git\n  alpha_g: 0.01\n")
    cfg = RunConfig.load(p, [parse_override("optim.lr0=3e-3"), parse_override("eval.strata=[random, G]")])
    assert cfg["variant"] == "two"
    assert cfg.loss_config().alpha_g == 0.01
    assert cfg["optim"]["lr0"] == 3e-3
    assert cfg["eval"]["strata"] == ["random", "G"]
    assert DEFAULTS["variant"] == "single"  # defaults never mutated


@pytest.mark.parametrize("data", [
    {"lossy": 1},
    {"loss": {"beta": 1}},
    {"loss": 3},
    {"variant": "three"},
    {"strategy": "sideways"},
    {"batch_size": 1},
    {"epochs": -1},
    {"loss": {"loss": "arcface"}},
    {"optim": {"gamma": 2.0}},
    {"split": {"fractions": [0.5, 0.5, 0.5]}},
    {"eval": {"gallery_sizes": [1, 2]}},
])
def test_rejected(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_bad_override_syntax():
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "nope.yaml")
