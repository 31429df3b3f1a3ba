"""Feed-forward tanh encoder with a linear softmax head.

Parameter names are ``layer{i}.W``/``layer{i}.b`` for the encoder and
``head.W``/``head.b`` for the classifier.  Weight matrices are stored
out x in, so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ndcore as nd
from .errors import ConfigError, DimensionError
from .ndcore import ParamSet, Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = (256, 64)
    weight_decay: float = 0.0
    label_smoothing: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.num_classes < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"all model dimensions must be >= 1: {self}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")

    @property
    def embed_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    def encoder_names(self) -> list[str]:
        return [f"layer{i}.{p}" for i in range(len(self.hidden_dims)) for p in ("W", "b")]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_dims": list(self.hidden_dims),
            "weight_decay": self.weight_decay,
            "label_smoothing": self.label_smoothing,
            "noise_std": self.noise_std,
        }


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    params: ParamSet
    trace: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        expected = _layout(self.config)
        actual = list(zip(self.params.names, self.params.shapes))
        if actual != expected:
            raise DimensionError(f"parameters {actual} do not match config layout {expected}")

    def encoder(self) -> ParamSet:
        return self.params.select(self.config.encoder_names())

    def with_params(self, params: ParamSet, trace: tuple[float, ...] = ()) -> Model:
        return Model(self.config, params, trace)

    def scores(self, x: np.ndarray) -> np.ndarray:
        with nd.no_grad():
            return forward(self, x).data


def _layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    dims = [config.input_dim, *config.hidden_dims]
    out = []
    for i in range(len(config.hidden_dims)):
        out += [(f"layer{i}.W", (dims[i + 1], dims[i])), (f"layer{i}.b", (dims[i + 1],))]
    out += [("head.W", (config.num_classes, config.embed_dim)), ("head.b", (config.num_classes,))]
    return out


def _he_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = math.sqrt(6.0 / shape[1])
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ModelConfig, seed: int) -> Model:
    rng = np.random.default_rng(seed)
    entries = []
    for name, shape in _layout(config):
        value = _he_uniform(rng, shape) if name.endswith(".W") else np.zeros(shape)
        entries.append((name, value))
    return Model(config, ParamSet.leaves(entries))


def reinit_head(model: Model, new_num_classes: int, seed: int) -> Model:
    """Copy the encoder and draw a fresh head for ``new_num_classes`` outputs."""
    if new_num_classes < 2:
        raise ConfigError(f"a classification head needs >= 2 classes, got {new_num_classes}")
    config = replace(model.config, num_classes=new_num_classes)
    rng = np.random.default_rng(seed)
    head_w = _he_uniform(rng, (new_num_classes, config.embed_dim))
    entries = [(n, t.data) for n, t in model.encoder().items()]
    entries += [("head.W", head_w), ("head.b", np.zeros(new_num_classes))]
    return Model(config, ParamSet.leaves(entries))


def _as_input(x, config: ModelConfig) -> Tensor:
    x = x if isinstance(x, Tensor) else nd._const(np.asarray(x, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise DimensionError(f"input of shape {x.shape} does not match input_dim {config.input_dim}")
    return x


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return nd.add(nd.matmul(x, nd.transpose(w)), b)


def embed(model: Model, x, params: ParamSet | None = None) -> Tensor:
    """Encoder output: tanh hidden layers, last layer left linear."""
    p = model.params if params is None else params
    h = _as_input(x, model.config)
    n_layers = len(model.config.hidden_dims)
    for i in range(n_layers):
        h = _linear(h, p[f"layer{i}.W"], p[f"layer{i}.b"])
        if i < n_layers - 1:
            h = nd.tanh(h)
    return h


def logits(model: Model, x, params: ParamSet | None = None) -> Tensor:
    p = model.params if params is None else params
    return _linear(embed(model, x, p), p["head.W"], p["head.b"])


def forward(model: Model, x, params: ParamSet | None = None) -> Tensor:
    return nd.softmax_rows(logits(model, x, params))


def weight_penalty(params: ParamSet) -> Tensor:
    """0.5 * sum of squared weight-matrix entries (biases excluded)."""
    total = None
    for name, t in params.items():
        if name.endswith(".W"):
            sq = nd.sumsq(t)
            total = sq if total is None else nd.add(total, sq)
    return nd.scale(total, 0.5)


def task_loss(
    model: Model,
    x,
    labels,
    rng: np.random.Generator | None = None,
    params: ParamSet | None = None,
    regularize: bool = True,
) -> Tensor:
    """Smoothed cross-entropy plus weight decay; Gaussian input noise when ``rng`` is given.

    ``regularize=False`` drops smoothing, decay and noise (used inside episodes).
    """
    cfg = model.config
    p = model.params if params is None else params
    x = _as_input(x, cfg)
    if regularize and rng is not None and cfg.noise_std > 0:
        x = nd._const(x.data + rng.normal(0.0, cfg.noise_std, size=x.shape))
    smoothing = cfg.label_smoothing if regularize else 0.0
    loss = nd.cross_entropy(forward(model, x, p), labels, smoothing)
    if regularize and cfg.weight_decay > 0:
        loss = nd.add(loss, nd.scale(weight_penalty(p), cfg.weight_decay))
    return loss
