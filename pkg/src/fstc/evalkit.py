"""Experiment harness: data-fraction comparison, ablation grid, metrics and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import ndcore as nd
from .errors import ConfigError, ContractError, DataError
from .metalearn import (
    MetaConfig,
    PrototypeClassifier,
    maml_adapt_classifier,
    meta_train,
    protonet_train,
)
from .ndcore import ParamSet, Tensor
from .nnmodel import Model, ModelConfig, reinit_head
from .textpipe import (
    Corpus,
    FeatureMatrix,
    Vocabulary,
    build_vocab,
    fingerprint,
    merge,
    restrict_classes,
    subsample_fraction,
    tfidf_featurize,
    train_test_split,
)
from .transfer import TrainConfig, finetune, pretrain, scratch_train

logger = logging.getLogger(__name__)

CSV_HEADER = ("model", "regime", "seed", "accuracy", "n_test")


@dataclass(frozen=True)
class RegimeSpec:
    name: str
    fraction: float

    def __post_init__(self):
        if REGIME_FRACTIONS.get(self.name) != self.fraction:
            raise ConfigError(f"regime {self.name!r} must use fraction {REGIME_FRACTIONS.get(self.name)}")


REGIME_FRACTIONS = {"few": 0.05, "medium": 0.50, "full": 1.00}
REGIMES = tuple(RegimeSpec(n, f) for n, f in REGIME_FRACTIONS.items())


def regime(name: str) -> RegimeSpec:
    if name not in REGIME_FRACTIONS:
        raise ConfigError(f"unknown regime {name!r}; choose from {list(REGIME_FRACTIONS)}")
    return RegimeSpec(name, REGIME_FRACTIONS[name])


@dataclass(frozen=True)
class AblationArm:
    name: str
    use_transfer: bool
    use_meta: bool

    def __post_init__(self):
        if _ARM_FLAGS.get(self.name) != (self.use_transfer, self.use_meta):
            raise ConfigError(f"arm {self.name!r} flags disagree with its name")


_ARM_FLAGS = {"base": (False, False), "transfer": (True, False), "meta": (False, True), "ours": (True, True)}
ARMS = tuple(AblationArm(n, *flags) for n, flags in _ARM_FLAGS.items())
COMPARISON_MODELS = ("logreg", "svm", "ours")


@dataclass(frozen=True)
class ReportRow:
    model: str
    regime: str
    seed: int
    accuracy: float
    n_test: int


@dataclass
class Report:
    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def accuracies(self, model: str, regime_name: str) -> list[float]:
        return [r.accuracy for r in self.rows if r.model == model and r.regime == regime_name]

    def mean(self, model: str, regime_name: str) -> float:
        return float(np.mean(self.accuracies(model, regime_name)))

    def summary(self) -> dict[str, dict[str, dict[str, float]]]:
        out: dict[str, dict[str, dict[str, float]]] = {}
        for r in self.rows:
            out.setdefault(r.model, {}).setdefault(r.regime, {})
        for model, regimes in out.items():
            for name in regimes:
                acc = np.asarray(self.accuracies(model, name))
                std = float(acc.std(ddof=1)) if len(acc) > 1 else 0.0
                regimes[name] = {"mean": float(acc.mean()), "std": std, "n": int(len(acc))}
        return out


# ---------------------------------------------------------------- classifiers


class Classifier(Protocol):
    def scores(self, x: np.ndarray) -> np.ndarray: ...


def accuracy(classifier: Classifier, test: FeatureMatrix) -> float:
    """Fraction of argmax predictions equal to the label (ties go to the lowest index)."""
    if len(test) == 0:
        raise ContractError("accuracy needs a non-empty test set")
    pred = np.argmax(classifier.scores(test.features), axis=1)
    return int((pred == test.labels).sum()) / len(test)


def baseline_logreg(train: FeatureMatrix, cfg: TrainConfig, weight_decay: float = 0.0) -> Model:
    """Multinomial logistic regression: the MLP with no hidden layers."""
    config = ModelConfig(
        input_dim=train.features.shape[1],
        num_classes=train.num_classes,
        hidden_dims=(),
        weight_decay=weight_decay,
    )
    return scratch_train(config, cfg, train)


def hinge_loss(w: Tensor, b: Tensor, x: np.ndarray, labels: np.ndarray, lam: float) -> Tensor:
    """One-vs-rest hinge: mean over samples of sum_c max(0, 1 - y_c f_c(x)) + lam ||W||^2."""
    m = x.shape[0]
    c = w.shape[0]
    signs = -np.ones((m, c))
    signs[np.arange(m), labels] = 1.0
    scores = nd.add(nd.matmul(nd._const(x), nd.transpose(w)), b)
    margins = nd.relu(nd.add_scalar(nd.neg(nd.mul(nd._const(signs), scores)), 1.0))
    loss = nd.scale(nd.sum(margins), 1.0 / m)
    if lam > 0:
        loss = nd.add(loss, nd.scale(nd.sum(nd.mul(w, w)), lam))
    return loss


@dataclass(frozen=True)
class LinearSVM:
    params: ParamSet
    trace: tuple[float, ...] = ()

    def scores(self, x: np.ndarray) -> np.ndarray:
        return x @ self.params["W"].data.T + self.params["b"].data


def baseline_svm(train: FeatureMatrix, cfg: TrainConfig, lam: float = 1e-3) -> LinearSVM:
    """One-vs-rest linear scorers trained by mini-batch subgradient descent on the hinge loss."""
    if len(train) == 0:
        raise ConfigError("cannot train on an empty feature matrix")
    c, d = train.num_classes, train.features.shape[1]
    params = ParamSet.leaves([("W", np.zeros((c, d))), ("b", np.zeros(c))])
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            loss = hinge_loss(params["W"], params["b"], train.features[rows], train.labels[rows], lam)
            params = nd.sgd_step(params, nd.grad(loss, params), cfg.lr).detach()
            losses.append(loss.item())
        trace.append(float(np.mean(losses)))
    return LinearSVM(params, tuple(trace))


# ---------------------------------------------------------------- data


@dataclass(frozen=True)
class ExperimentData:
    """Featurized source and target splits sharing one vocabulary."""

    source: FeatureMatrix
    target_train: FeatureMatrix
    target_test: FeatureMatrix
    target_train_corpus: Corpus
    vocab: Vocabulary
    fingerprint: str

    @property
    def input_dim(self) -> int:
        return len(self.vocab)

    def regime_train(self, spec: RegimeSpec, seed: int) -> FeatureMatrix:
        sub = subsample_fraction(self.target_train_corpus, spec.fraction, seed)
        row_of = {doc_id: i for i, doc_id in enumerate(self.target_train.doc_ids)}
        return self.target_train.take([row_of[d] for d in sub.ids])


def default_target_classes(class_names: Sequence[str], count: int) -> list[str]:
    """Every k-th class in lexicographic order, k = num_classes // count."""
    names = sorted(class_names)
    if not 2 <= count < len(names):
        raise ConfigError(f"need 2 <= target classes < {len(names)}, got {count}")
    step = len(names) // count
    return [names[i * step] for i in range(count)]


def prepare_experiment(
    corpus: Corpus,
    target_classes: Sequence[str],
    split_seed: int = 0,
    test_fraction: float = 0.3,
    min_df: int = 2,
    max_vocab: int = 2000,
) -> ExperimentData:
    """Split classes into source and target, hold out a stratified target test set, featurize.

    The vocabulary is built from source documents and the target training
    split only, so test documents never influence document frequencies.
    """
    target_classes = list(target_classes)
    source_classes = [c for c in corpus.class_names if c not in target_classes]
    if not source_classes:
        raise ConfigError("no classes left for the source split")
    target = restrict_classes(corpus, target_classes, "target_train")
    source = restrict_classes(corpus, source_classes, "source")
    target_train, target_test = train_test_split(target, test_fraction, split_seed)
    vocab = build_vocab(merge([source, target_train]), min_df=min_df, max_size=max_vocab)
    fp = fingerprint(corpus.ids, vocab.terms)
    return ExperimentData(
        source=tfidf_featurize(source, vocab),
        target_train=tfidf_featurize(target_train, vocab),
        target_test=tfidf_featurize(target_test, vocab),
        target_train_corpus=target_train,
        vocab=vocab,
        fingerprint=fp,
    )


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentConfig:
    hidden_dims: tuple[int, ...] = (256, 64)
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1
    noise_std: float = 0.0
    pretrain: TrainConfig = TrainConfig(lr=0.1, epochs=30, batch_size=32, momentum=0.9)
    finetune: TrainConfig = TrainConfig(lr=0.1, epochs=30, batch_size=16, momentum=0.9)
    baseline: TrainConfig = TrainConfig(lr=0.5, epochs=30, batch_size=16, momentum=0.9)
    svm_lambda: float = 1e-4
    meta: MetaConfig = MetaConfig()
    meta_algorithm: str = "protonet"
    # ProtoNet outer step; unit-norm TF-IDF inputs need a far larger step than MAML
    proto_lr: float = 10.0
    adapt_lr: float = 0.1
    adapt_steps: int = 20
    regimes: tuple[str, ...] = ("few", "medium", "full")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if self.meta_algorithm not in ("maml", "protonet"):
            raise ConfigError(f"meta_algorithm must be 'maml' or 'protonet', got {self.meta_algorithm!r}")
        for name in self.regimes:
            regime(name)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.proto_lr <= 0:
            raise ConfigError(f"proto_lr must be > 0, got {self.proto_lr}")
        if self.adapt_steps < 0 or self.adapt_lr <= 0:
            raise ConfigError("adapt_steps must be >= 0 and adapt_lr > 0")

    def model_config(self, input_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim,
            num_classes=num_classes,
            hidden_dims=self.hidden_dims,
            weight_decay=self.weight_decay,
            label_smoothing=self.label_smoothing,
            noise_std=self.noise_std,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        d["regimes"] = list(self.regimes)
        d["seeds"] = list(self.seeds)
        return d


def _with_seed(cfg, seed: int):
    return type(cfg)(**{**asdict(cfg), "seed": seed})


class _Runner:
    """Trains and caches the seed-level models shared across regimes."""

    def __init__(self, data: ExperimentData, cfg: ExperimentConfig):
        self.data = data
        self.cfg = cfg
        self.num_target = data.target_train.num_classes
        self.ledger: dict[str, list[str]] = {}
        self._pretrained: dict[int, Model] = {}
        self._meta: dict[tuple[int, bool], Model] = {}

    def log(self, arm: str, op: str) -> None:
        self.ledger.setdefault(arm, []).append(op)

    def target_config(self) -> ModelConfig:
        return self.cfg.model_config(self.data.input_dim, self.num_target)

    def pretrained(self, arm: str, seed: int) -> Model:
        self.log(arm, "pretrain")
        if seed not in self._pretrained:
            config = self.cfg.model_config(self.data.input_dim, self.data.source.num_classes)
            self._pretrained[seed] = pretrain(config, _with_seed(self.cfg.pretrain, seed), self.data.source)
        return self._pretrained[seed]

    def meta_model(self, arm: str, seed: int, from_pretrained: bool) -> Model:
        init = self.pretrained(arm, seed) if from_pretrained else None
        self.log(arm, f"meta_train:{self.cfg.meta_algorithm}")
        key = (seed, from_pretrained)
        if key not in self._meta:
            meta = _with_seed(self.cfg.meta, seed)
            if self.cfg.meta_algorithm == "protonet":
                meta = replace(meta, outer_lr=self.cfg.proto_lr)
            config = self.cfg.model_config(self.data.input_dim, meta.way)
            train = protonet_train if self.cfg.meta_algorithm == "protonet" else meta_train
            self._meta[key] = train(config, meta, self.data.source, init)
        return self._meta[key]

    def adapt(self, arm: str, model: Model, train: FeatureMatrix, seed: int) -> Classifier:
        self.log(arm, f"adapt:{self.cfg.meta_algorithm}")
        if self.cfg.meta_algorithm == "protonet":
            return PrototypeClassifier(model, train, self.num_target)
        if model.config.num_classes != self.num_target:
            model = reinit_head(model, self.num_target, seed)
        return maml_adapt_classifier(model, train, self.cfg.adapt_lr, self.cfg.adapt_steps)

    def classifier(self, name: str, train: FeatureMatrix, seed: int) -> Classifier:
        cfg = self.cfg
        if name == "base":
            self.log(name, "scratch_train")
            return scratch_train(self.target_config(), _with_seed(cfg.finetune, seed), train)
        if name == "transfer":
            pre = self.pretrained(name, seed)
            self.log(name, "finetune")
            return finetune(pre, _with_seed(cfg.finetune, seed), train, self.num_target)
        if name in ("meta", "ours"):
            return self.adapt(name, self.meta_model(name, seed, name == "ours"), train, seed)
        if name == "logreg":
            self.log(name, "logreg")
            return baseline_logreg(train, _with_seed(cfg.baseline, seed), cfg.weight_decay)
        if name == "svm":
            self.log(name, "svm")
            return baseline_svm(train, _with_seed(cfg.baseline, seed), cfg.svm_lambda)
        raise ConfigError(f"unknown model {name!r}")


def _run_grid(data: ExperimentData, cfg: ExperimentConfig, models: Sequence[str], kind: str) -> Report:
    runner = _Runner(data, cfg)
    test_ids = set(data.target_test.doc_ids)
    source_ids = set(data.source.doc_ids)
    if test_ids & source_ids or test_ids & set(data.target_train.doc_ids):
        raise DataError("test documents overlap training documents")
    cells: dict[tuple[int, int, int], tuple[ReportRow, dict]] = {}
    # seed-major so cached pretrained/meta models are reused before moving on
    for si, seed in enumerate(cfg.seeds):
        for ri, regime_name in enumerate(cfg.regimes):
            train = data.regime_train(regime(regime_name), seed)
            if test_ids & set(train.doc_ids):
                raise DataError(f"test documents leaked into the {regime_name} training set")
            for mi, name in enumerate(models):
                start = time.perf_counter()
                clf = runner.classifier(name, train, seed)
                acc = accuracy(clf, data.target_test)
                wall = time.perf_counter() - start
                row = ReportRow(name, regime_name, seed, acc, len(data.target_test))
                cells[(mi, ri, si)] = (
                    row,
                    {
                        "model": name,
                        "regime": regime_name,
                        "seed": seed,
                        "n_train": len(train),
                        "train_fingerprint": fingerprint(train.doc_ids),
                        "wall_time_s": wall,
                    },
                )
                logger.info("%s %s seed=%d acc=%.4f (%.1fs)", name, regime_name, seed, acc, wall)
    ordered = [cells[k] for k in sorted(cells)]
    report = Report(rows=[row for row, _ in ordered])
    report.metadata = {
        "experiment": kind,
        "config": cfg.to_dict(),
        "corpus_fingerprint": data.fingerprint,
        "test_fingerprint": fingerprint(data.target_test.doc_ids),
        "full_train_fingerprint": fingerprint(data.target_train.doc_ids),
        "target_classes": list(data.target_train.class_names),
        "source_classes": list(data.source.class_names),
        "vocab_size": len(data.vocab),
        "cells": [meta for _, meta in ordered],
        "run_ledger": runner.ledger,
        "summary": report.summary(),
    }
    return report


def run_comparison(data: ExperimentData, cfg: ExperimentConfig) -> Report:
    """Linear baselines against the full method for each data regime and seed."""
    return _run_grid(data, cfg, COMPARISON_MODELS, "comparison")


def run_ablation(data: ExperimentData, cfg: ExperimentConfig) -> Report:
    """The four transfer/meta arms for each data regime and seed."""
    return _run_grid(data, cfg, [a.name for a in ARMS], "ablation")


# ---------------------------------------------------------------- report files


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_suffix(".json") if path.suffix else path.with_name(path.name + ".json")


def report_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in report.rows:
        writer.writerow([r.model, r.regime, r.seed, f"{r.accuracy:.6f}", r.n_test])
    return buf.getvalue()


def emit_report(report: Report, path: str | Path) -> Path:
    """Write the CSV to ``path`` and the metadata to a ``.json`` sidecar."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report_csv(report), encoding="utf-8", newline="")
        sidecar_path(path).write_text(
            json.dumps(report.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise DataError(f"cannot write report to {path}: {exc}") from exc
    return path


def read_report(path: str | Path) -> Report:
    """Parse a report written by :func:`emit_report`.

    Accuracies are rebuilt as ``correct / n_test`` from the 6-decimal text,
    which restores the exact stored fraction for any test set below 10^6.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
        side = sidecar_path(path)
        metadata = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise DataError(f"{path}: unexpected header {header}")
    rows = []
    for rec in reader:
        model, regime_name, seed, acc, n_test = rec
        n = int(n_test)
        correct = round(float(acc) * n)
        rows.append(ReportRow(model, regime_name, int(seed), correct / n, n))
    return Report(rows, metadata)
