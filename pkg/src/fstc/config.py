"""Run configuration: a YAML file of sections mapped onto the library's config types.

Every key has a default, unknown keys are rejected, and value types are
checked against the defaults before any command touches data.  Section
``seed`` fields are not accepted; the top-level ``seed`` drives all of them.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .evalkit import ExperimentConfig
from .metalearn import MetaConfig
from .transfer import TrainConfig
from .tsneproj import TsneConfig

DATA_DIR_ENV = "FSTC_DATA_DIR"


@dataclass(frozen=True)
class DataConfig:
    # int: pick that many classes spread over the sorted names; list: exact names
    target_classes: Any = 5
    split_seed: int = 0
    test_fraction: float = 0.3
    min_df: int = 2
    max_vocab: int = 2000

    def __post_init__(self):
        tc = self.target_classes
        if isinstance(tc, bool) or not (isinstance(tc, int) or (isinstance(tc, (list, tuple)) and tc)):
            raise ConfigError("data.target_classes must be a class count or a non-empty list of class names")
        if isinstance(tc, (list, tuple)):
            if not all(isinstance(c, str) for c in tc):
                raise ConfigError("data.target_classes entries must be class names")
            object.__setattr__(self, "target_classes", tuple(tc))
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"data.test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.min_df < 1 or self.max_vocab < 1:
            raise ConfigError("data.min_df and data.max_vocab must be >= 1")


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: tuple[int, ...] = (256, 64)
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1
    noise_std: float = 0.0


@dataclass(frozen=True)
class ExperimentSection:
    meta_algorithm: str = "protonet"
    proto_lr: float = 10.0
    adapt_lr: float = 0.1
    adapt_steps: int = 20
    svm_lambda: float = 1e-4
    regimes: tuple[str, ...] = ("few", "medium", "full")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class PathsConfig:
    corpus_dir: str | None = None
    out_dir: str = "."


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.1, epochs=30, batch_size=32, momentum=0.9))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.1, epochs=30, batch_size=16, momentum=0.9))
    baseline: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.5, epochs=30, batch_size=16, momentum=0.9))
    meta: MetaConfig = field(default_factory=MetaConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    tsne: TsneConfig = field(default_factory=TsneConfig)

    def corpus_dir(self, override: str | None = None) -> Path:
        raw = override or self.paths.corpus_dir or os.environ.get(DATA_DIR_ENV)
        if not raw:
            raise ConfigError(f"paths.corpus_dir is unset and ${DATA_DIR_ENV} is not defined")
        return Path(raw)

    def train(self, section: str) -> TrainConfig:
        return replace(getattr(self, section), seed=self.seed)

    def meta_config(self) -> MetaConfig:
        return replace(self.meta, seed=self.seed)

    def tsne_config(self) -> TsneConfig:
        return replace(self.tsne, seed=self.seed)

    def experiment_config(self) -> ExperimentConfig:
        m, e = self.model, self.experiment
        return ExperimentConfig(
            hidden_dims=m.hidden_dims,
            weight_decay=m.weight_decay,
            label_smoothing=m.label_smoothing,
            noise_std=m.noise_std,
            pretrain=self.pretrain,
            finetune=self.finetune,
            baseline=self.baseline,
            svm_lambda=e.svm_lambda,
            meta=self.meta,
            meta_algorithm=e.meta_algorithm,
            proto_lr=e.proto_lr,
            adapt_lr=e.adapt_lr,
            adapt_steps=e.adapt_steps,
            regimes=e.regimes,
            seeds=e.seeds,
        )

    def with_seed(self, seed: int) -> RunConfig:
        """``--seed``: replaces the training seed and collapses the experiment grid to that seed."""
        return replace(self, seed=seed, experiment=replace(self.experiment, seeds=(seed,)))

    def to_dict(self) -> dict:
        """Plain mapping that ``parse_config`` accepts; section seeds are dropped."""
        d = _plain(asdict(self))
        for name in _NO_SEED:
            d[name].pop("seed", None)
        return d


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


_SECTIONS = {f.name: f for f in fields(RunConfig) if f.name != "seed"}
_NO_SEED = ("pretrain", "finetune", "baseline", "meta", "tsne")


def _coerce(key: str, value, default):
    """Check ``value`` against the type of ``default``; ints are accepted where floats are expected."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        proto = default[0] if default else value[0] if value else None
        return tuple(_coerce(f"{key}[{i}]", v, proto) for i, v in enumerate(value))
    if default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a string path, got {value!r}")
        return value
    return value


def _build_section(name: str, raw, default):
    if raw is None:
        return default
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping, got {type(raw).__name__}")
    types = {f.name: f.type for f in fields(default)}
    allowed = set(types)
    if name in _NO_SEED:
        allowed.discard("seed")
    updates = {}
    for key, value in raw.items():
        if key not in allowed:
            hint = " (use the top-level seed)" if key == "seed" else ""
            raise ConfigError(f"unknown config key '{name}.{key}'{hint}")
        # fields typed Any validate themselves in __post_init__
        updates[key] = value if types[key] == "Any" else _coerce(f"{name}.{key}", value, getattr(default, key))
    try:
        return replace(default, **updates)
    except ConfigError as exc:
        raise ConfigError(f"invalid section {name!r}: {exc}") from exc


def parse_config(raw: dict | None) -> RunConfig:
    """Validate a parsed mapping into a RunConfig (all checks happen here)."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping at the top level")
    base = RunConfig()
    updates: dict[str, Any] = {}
    for key, value in raw.items():
        if key == "seed":
            updates["seed"] = _coerce("seed", value, 0)
            if updates["seed"] < 0:
                raise ConfigError("seed must be >= 0")
        elif key in _SECTIONS:
            updates[key] = _build_section(key, value, getattr(base, key))
        else:
            raise ConfigError(f"unknown config key '{key}'")
    cfg = replace(base, **updates)
    cfg.experiment_config().model_config(1, 2)  # cross-field checks: regimes, algorithm, model dims
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(raw)


def dump_defaults() -> str:
    return yaml.safe_dump(RunConfig().to_dict(), sort_keys=False)
