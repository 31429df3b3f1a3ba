"""Episodic N-way K-shot training: MAML (both orders) and prototypical networks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .errors import ConfigError, ContractError, SamplingError
from .ndcore import ParamSet, Tensor
from .nnmodel import Model, ModelConfig, embed, forward, init_model, reinit_head, task_loss
from .textpipe import FeatureMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaConfig:
    way: int = 5
    shot: int = 5
    queries: int = 15
    inner_lr: float = 0.05
    inner_steps: int = 3
    outer_lr: float = 0.01
    meta_batch: int = 4
    episodes_total: int = 400
    order: str = "second"
    seed: int = 0

    def __post_init__(self):
        if self.way < 2 or self.shot < 1 or self.queries < 1:
            raise ConfigError(f"need way >= 2, shot >= 1, queries >= 1: {self}")
        if self.inner_lr <= 0 or self.outer_lr <= 0:
            raise ConfigError("inner_lr and outer_lr must be > 0")
        if self.inner_steps < 0 or self.meta_batch < 1 or self.episodes_total < 0:
            raise ConfigError(f"invalid step/batch/episode counts: {self}")
        if self.order not in ("first", "second"):
            raise ConfigError(f"order must be 'first' or 'second', got {self.order!r}")


@dataclass(frozen=True)
class Episode:
    way: int
    shot: int
    queries_per_class: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    class_origin: tuple[int, ...]
    support_rows: np.ndarray
    query_rows: np.ndarray


def sample_episode(features: FeatureMatrix, meta: MetaConfig, episode_index: int) -> Episode:
    """Draw one task, reproducibly for a given ``(meta.seed, episode_index)``."""
    by_class: dict[int, np.ndarray] = {
        int(c): np.flatnonzero(features.labels == c) for c in np.unique(features.labels)
    }
    need = meta.shot + meta.queries
    eligible = sorted(c for c, rows in by_class.items() if len(rows) >= need)
    if len(eligible) < meta.way:
        raise SamplingError(
            f"{meta.way}-way episodes with {need} documents per class need {meta.way} classes; "
            f"only {len(eligible)} of {len(by_class)} classes have enough documents"
        )
    rng = np.random.default_rng([meta.seed, episode_index])
    chosen = rng.choice(np.asarray(eligible), size=meta.way, replace=False)
    support, query = [], []
    for c in chosen:
        rows = rng.permutation(by_class[int(c)])[:need]
        support.append(rows[: meta.shot])
        query.append(rows[meta.shot :])
    s_rows = np.concatenate(support)
    q_rows = np.concatenate(query)
    return Episode(
        way=meta.way,
        shot=meta.shot,
        queries_per_class=meta.queries,
        support_x=features.features[s_rows],
        support_y=np.repeat(np.arange(meta.way), meta.shot),
        query_x=features.features[q_rows],
        query_y=np.repeat(np.arange(meta.way), meta.queries),
        class_origin=tuple(int(c) for c in chosen),
        support_rows=s_rows,
        query_rows=q_rows,
    )


# ---------------------------------------------------------------- MAML


def inner_adapt(
    model: Model,
    support_x,
    support_y,
    alpha: float,
    steps: int,
    higher_order: bool,
    params: ParamSet | None = None,
) -> ParamSet:
    """``steps`` full-batch gradient steps on the unregularized support loss.

    With ``higher_order`` the steps stay on the graph, so the adapted
    parameters remain differentiable (to second order) in the originals.
    """
    if steps < 0:
        raise ConfigError(f"inner steps must be >= 0, got {steps}")
    theta = model.params if params is None else params
    for _ in range(steps):
        with nd.enable_grad():
            loss = task_loss(model, support_x, support_y, params=theta, regularize=False)
        g = nd.grad(loss, theta, create_graph=higher_order)
        theta = nd.sgd_step(theta, g, alpha)
        if not all(t.requires_grad for t in theta.tensors):
            theta = theta.detach()
    return theta


def query_loss(model: Model, episode: Episode, params: ParamSet) -> Tensor:
    return task_loss(model, episode.query_x, episode.query_y, params=params, regularize=False)


def pooled_loss(losses: list[Tensor]) -> Tensor:
    """Mean of per-episode losses, summed in list order."""
    total = losses[0]
    for loss in losses[1:]:
        total = nd.add(total, loss)
    return nd.scale(total, 1.0 / len(losses))


def maml_episode_losses(model: Model, episodes: list[Episode], meta: MetaConfig) -> list[Tensor]:
    """Post-adaptation query loss of each episode, differentiable in ``model.params``.

    For the second-order variant the inner updates are recorded.  For the
    first-order variant each adapted parameter tensor carries its value but
    passes gradients straight through to the original (identity Jacobian).
    """
    if not episodes:
        raise ContractError("a meta step needs at least one episode")
    theta = model.params
    losses = []
    for ep in episodes:
        if meta.inner_steps == 0:
            adapted = theta
        elif meta.order == "second":
            adapted = inner_adapt(model, ep.support_x, ep.support_y, meta.inner_lr, meta.inner_steps, True)
        else:
            with nd.no_grad():
                values = inner_adapt(
                    model, ep.support_x, ep.support_y, meta.inner_lr, meta.inner_steps, False
                )
            adapted = theta.zip_map(values, nd.with_value)
        losses.append(query_loss(model, ep, adapted))
    return losses


def maml_meta_loss(model: Model, episodes: list[Episode], meta: MetaConfig) -> Tensor:
    return pooled_loss(maml_episode_losses(model, episodes, meta))


def maml_meta_gradient(
    model: Model, episodes: list[Episode], meta: MetaConfig
) -> tuple[ParamSet, list[float]]:
    """Meta-gradient of the pooled query loss plus the per-episode losses."""
    losses = maml_episode_losses(model, episodes, meta)
    meta_loss = pooled_loss(losses)
    if meta.order == "second":
        g = nd.grad_through_grad(meta_loss, model.params)
    else:
        g = nd.grad(meta_loss, model.params)
    return g, [loss.item() for loss in losses]


def maml_meta_step(model: Model, episodes: list[Episode], meta: MetaConfig) -> Model:
    g, losses = maml_meta_gradient(model, episodes, meta)
    return model.with_params(nd.sgd_step(model.params, g, meta.outer_lr).detach(), tuple(losses))


def _episode_batches(meta: MetaConfig):
    for start in range(0, meta.episodes_total, meta.meta_batch):
        yield range(start, min(start + meta.meta_batch, meta.episodes_total))


def meta_train(
    config: ModelConfig, meta: MetaConfig, meta_train_features: FeatureMatrix, init: Model | None = None
) -> Model:
    """Outer loop of MAML over ``meta.episodes_total`` episodes.

    With ``init`` the encoder is taken from it and a fresh ``way``-output
    head is attached.  The returned trace holds one mean query loss per
    episode, in episode order.
    """
    if meta.episodes_total == 0 and init is not None:
        return init
    if init is None:
        model = init_model(ModelConfig(**{**config.to_dict(), "num_classes": meta.way}), meta.seed)
    else:
        model = reinit_head(init, meta.way, meta.seed)
    if meta.episodes_total == 0:
        return model
    trace: list[float] = []
    for batch in _episode_batches(meta):
        episodes = [sample_episode(meta_train_features, meta, i) for i in batch]
        g, losses = maml_meta_gradient(model, episodes, meta)
        model = model.with_params(nd.sgd_step(model.params, g, meta.outer_lr).detach())
        trace.extend(losses)
    logger.info("MAML meta-training done: first loss %.4f, last loss %.4f", trace[0], trace[-1])
    return model.with_params(model.params, tuple(trace))


class AdaptedClassifier:
    """A meta-learned model after inner adaptation on labelled data."""

    def __init__(self, model: Model, params: ParamSet):
        self.model = model
        self.params = params

    def scores(self, x: np.ndarray) -> np.ndarray:
        with nd.no_grad():
            return forward(self.model, x, self.params).data


def maml_adapt_classifier(model: Model, train: FeatureMatrix, alpha: float, steps: int) -> AdaptedClassifier:
    with nd.no_grad():
        params = inner_adapt(model, train.features, train.labels, alpha, steps, False)
    return AdaptedClassifier(model, params.detach(requires_grad=False))


# ---------------------------------------------------------------- ProtoNet


def protonet_prototypes(embeddings: Tensor, labels, num_classes: int) -> Tensor:
    """Per-class mean embedding, one row per class (differentiable)."""
    labels = np.asarray(labels, dtype=np.int64)
    if embeddings.ndim != 2 or embeddings.shape[0] != len(labels):
        raise ContractError(f"{len(labels)} labels for embeddings of shape {embeddings.shape}")
    counts = np.bincount(labels, minlength=num_classes)[:num_classes]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes})")
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ContractError(f"classes {empty.tolist()} have no support embeddings")
    avg = np.zeros((num_classes, len(labels)))
    avg[labels, np.arange(len(labels))] = 1.0 / counts[labels]
    return nd.matmul(nd._const(avg), embeddings)


def protonet_classify(query_emb: Tensor, prototypes: Tensor) -> Tensor:
    """Softmax over negative squared Euclidean distance to each prototype."""
    return nd.softmax_rows(nd.neg(nd.sqdist(query_emb, prototypes)))


def protonet_episode_loss(model: Model, episode: Episode, params: ParamSet | None = None) -> Tensor:
    protos = protonet_prototypes(embed(model, episode.support_x, params), episode.support_y, episode.way)
    probs = protonet_classify(embed(model, episode.query_x, params), protos)
    return nd.cross_entropy(probs, episode.query_y)


def protonet_train(
    config: ModelConfig, meta: MetaConfig, features: FeatureMatrix, init: Model | None = None
) -> Model:
    """Episodic training of the encoder alone; the head is carried along untouched."""
    if init is None:
        model = init_model(ModelConfig(**{**config.to_dict(), "num_classes": meta.way}), meta.seed)
    else:
        model = init
    encoder_names = model.config.encoder_names()
    if not encoder_names:
        raise ConfigError("prototypical networks need at least one hidden layer")
    trace: list[float] = []
    for batch in _episode_batches(meta):
        episodes = [sample_episode(features, meta, i) for i in batch]
        losses = [protonet_episode_loss(model, ep) for ep in episodes]
        loss = pooled_loss(losses)
        encoder = model.params.select(encoder_names)
        stepped = nd.sgd_step(encoder, nd.grad(loss, encoder), meta.outer_lr).detach()
        model = model.with_params(model.params.replace(**dict(stepped.items())))
        trace.extend(loss_i.item() for loss_i in losses)
    if trace:
        logger.info("ProtoNet training done: first loss %.4f, last loss %.4f", trace[0], trace[-1])
    return model.with_params(model.params, tuple(trace))


class PrototypeClassifier:
    """Nearest-prototype classifier over a trained encoder."""

    def __init__(self, model: Model, train: FeatureMatrix, num_classes: int | None = None):
        self.model = model
        n = num_classes if num_classes is not None else int(train.labels.max()) + 1
        with nd.no_grad():
            self.prototypes = protonet_prototypes(embed(model, train.features), train.labels, n)

    def scores(self, x: np.ndarray) -> np.ndarray:
        with nd.no_grad():
            return protonet_classify(embed(self.model, x), self.prototypes).data
