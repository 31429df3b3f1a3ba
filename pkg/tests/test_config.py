import pytest
import yaml

from fstc.config import DATA_DIR_ENV, RunConfig, dump_defaults, load_config, parse_config
from fstc.errors import ConfigError


def test_defaults_round_trip_through_yaml():
    assert parse_config(yaml.safe_load(dump_defaults())) == RunConfig()
    assert parse_config(None) == RunConfig() == load_config(None)
    cfg = parse_config({"seed": 5, "data": {"target_classes": ["a", "b"]}})
    assert parse_config(cfg.to_dict()) == cfg


@pytest.mark.parametrize(
    "raw, key",
    [
        ({"meta": {"wayy": 5}}, "meta.wayy"),
        ({"bogus": 1}, "bogus"),
        ({"pretrain": {"seed": 3}}, "pretrain.seed"),
        ({"tsne": {"perplex": 3}}, "tsne.perplex"),
    ],
)
def test_unknown_keys_are_named(raw, key):
    with pytest.raises(ConfigError, match=f"'{key}'"):
        parse_config(raw)


@pytest.mark.parametrize(
    "raw",
    [
        {"pretrain": {"lr": "fast"}},
        {"pretrain": {"epochs": 1.5}},
        {"seed": -1},
        {"model": {"hidden_dims": 64}},
        {"experiment": {"regimes": ["few", "tiny"]}},
        {"experiment": {"meta_algorithm": "reptile"}},
        {"data": {"target_classes": []}},
        {"data": {"test_fraction": 1.0}},
        {"tsne": {"perplexity": 1}},
        {"meta": "nope"},
        ["not", "a", "mapping"],
    ],
)
def test_invalid_values(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_seed_drives_every_section():
    cfg = parse_config({"seed": 9, "pretrain": {"epochs": 3, "lr": 1}})
    assert cfg.train("pretrain").seed == 9 and cfg.train("pretrain").lr == 1.0
    assert cfg.meta_config().seed == 9 and cfg.tsne_config().seed == 9
    assert cfg.experiment_config().seeds == (0, 1, 2, 3, 4)
    over = cfg.with_seed(4)
    assert over.seed == 4 and over.experiment_config().seeds == (4,)


def test_target_classes_and_lists():
    cfg = parse_config({"data": {"target_classes": ["a", "b"]}, "model": {"hidden_dims": [8, 4]}})
    assert cfg.data.target_classes == ("a", "b") and cfg.model.hidden_dims == (8, 4)


def test_corpus_dir_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    with pytest.raises(ConfigError, match=DATA_DIR_ENV):
        RunConfig().corpus_dir()
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path / "env"))
    assert RunConfig().corpus_dir() == tmp_path / "env"
    cfg = parse_config({"paths": {"corpus_dir": str(tmp_path / "cfg")}})
    assert cfg.corpus_dir() == tmp_path / "cfg"
    assert cfg.corpus_dir(str(tmp_path / "cli")) == tmp_path / "cli"


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)
