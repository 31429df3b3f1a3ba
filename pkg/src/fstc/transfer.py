"""Source pretraining, target fine-tuning and the no-transfer baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import ndcore as nd
from .errors import ConfigError
from .nnmodel import Model, ModelConfig, init_model, reinit_head, task_loss
from .textpipe import FeatureMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    momentum: float = 0.0
    freeze_encoder: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


def fit(model: Model, train: TrainConfig, data: FeatureMatrix, trainable: list[str] | None = None) -> Model:
    """Mini-batch SGD with optional momentum on ``task_loss``.

    Rows are reshuffled each epoch from a stream seeded by ``train.seed``;
    feature noise (if configured) draws from an independent child stream.
    Only names in ``trainable`` are updated; the rest stay bit-identical.
    The returned model carries the per-epoch mean training loss.
    """
    if len(data) == 0:
        raise ConfigError("cannot train on an empty feature matrix")
    names = list(model.params.names) if trainable is None else trainable
    shuffle_ss, noise_ss = np.random.SeedSequence(train.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    noise_rng = np.random.default_rng(noise_ss)
    params = model.params
    velocity: dict[str, np.ndarray] = {}
    trace: list[float] = []
    n = len(data)
    for _ in range(train.epochs):
        order = shuffle_rng.permutation(n)
        losses, weights = [], []
        for start in range(0, n, train.batch_size):
            rows = order[start : start + train.batch_size]
            loss = task_loss(model, data.features[rows], data.labels[rows], noise_rng, params)
            grads = nd.grad(loss, params)
            params = _apply(params, grads, names, train, velocity)
            losses.append(loss.item())
            weights.append(len(rows))
        trace.append(float(np.average(losses, weights=weights)))
    return model.with_params(params, tuple(trace))


def _apply(params, grads, names, train: TrainConfig, velocity) -> nd.ParamSet:
    entries = []
    for name, p in params.items():
        if name not in names:
            entries.append((name, p))
            continue
        g = grads[name].data
        if train.momentum > 0:
            v = velocity.get(name)
            v = g if v is None else train.momentum * v + g
            velocity[name] = v
        else:
            v = g
        entries.append((name, nd.Tensor(p.data - v * train.lr, requires_grad=True)))
    return nd.ParamSet(entries)


def pretrain(config: ModelConfig, train: TrainConfig, source: FeatureMatrix) -> Model:
    """Fit a fresh model to the source task; the result approximates the optimal pretrained weights."""
    if len(source) == 0:
        raise ConfigError("source feature matrix is empty")
    if source.labels.max() >= config.num_classes:
        raise ConfigError(
            f"source labels reach {int(source.labels.max())} but the model has {config.num_classes} classes"
        )
    model = init_model(config, train.seed)
    logger.info("pretraining %d params on %d documents", model.params.num_params, len(source))
    return fit(model, train, source)


def finetune(
    pretrained: Model, train: TrainConfig, target_train: FeatureMatrix, target_num_classes: int
) -> Model:
    """Replace the head for the target label set, then run SGD on the target loss."""
    if len(target_train) == 0:
        raise ConfigError("target feature matrix is empty")
    model = reinit_head(pretrained, target_num_classes, train.seed)
    trainable = ["head.W", "head.b"] if train.freeze_encoder else None
    return fit(model, train, target_train, trainable)


def scratch_train(config: ModelConfig, train: TrainConfig, target_train: FeatureMatrix) -> Model:
    """Same architecture trained on the target task alone."""
    return pretrain(config, train, target_train)


def with_classes(config: ModelConfig, num_classes: int) -> ModelConfig:
    return replace(config, num_classes=num_classes)
