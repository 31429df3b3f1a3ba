"""Exact O(n^2) t-SNE for projecting document embeddings to the plane."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .errors import ConfigError, DataError, NumericError
from .nnmodel import Model, embed
from .textpipe import FeatureMatrix

logger = logging.getLogger(__name__)

PROJECTION_HEADER = ("x", "y", "label", "class_name")


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iters: int = 1000
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    kl_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 1:
            raise ConfigError(f"perplexity must be > 1, got {self.perplexity}")
        if self.iters < 1 or self.learning_rate <= 0 or self.kl_every < 1:
            raise ConfigError(f"invalid t-SNE schedule: {self}")


@dataclass(frozen=True)
class Projection:
    points: np.ndarray
    labels: np.ndarray
    kl_trace: tuple[float, ...] = ()
    class_names: tuple[str, ...] = ()


def _sq_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_distribution(dist: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Gaussian kernel over one row of distances; returns (p, entropy in bits)."""
    shifted = dist - dist.min()
    w = np.exp(-shifted * beta)
    p = w / w.sum()
    nz = p > 0
    h = -np.sum(p[nz] * np.log2(p[nz]))
    return p, h


def conditional_affinities(
    x: np.ndarray, perplexity: float, tol: float = 1e-4, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row conditional affinities p_{j|i} and the symmetrized joint P.

    The precision beta_i = 1/(2 sigma_i^2) is found by bisection so that the
    row's perplexity 2^H matches ``perplexity``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise ConfigError(f"t-SNE needs at least 3 points, got {n}")
    if perplexity >= n - 1:
        raise ConfigError(f"perplexity {perplexity} must be below n - 1 = {n - 1}")
    d = _sq_distances(x)
    target = np.log2(perplexity)
    cond = np.zeros((n, n))
    for i in range(n):
        others = np.delete(d[i], i)
        if others.max() - others.min() <= 1e-12 * max(others.max(), 1e-300):
            # equidistant neighbours: every bandwidth gives the uniform row
            cond[i, np.arange(n) != i] = 1.0 / (n - 1)
            continue
        beta, lo, hi = 1.0, 0.0, np.inf
        p, h = _row_distribution(others, beta)
        for _ in range(max_iter):
            if abs(2.0**h - perplexity) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            p, h = _row_distribution(others, beta)
        cond[i, np.arange(n) != i] = p
    joint = (cond + cond.T) / (2.0 * n)
    return cond, joint


def row_perplexities(cond: np.ndarray) -> np.ndarray:
    out = []
    for row in cond:
        p = row[row > 0]
        out.append(2.0 ** (-np.sum(p * np.log2(p))))
    return np.asarray(out)


def _student_t(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + _sq_distances(y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    q, _ = _student_t(y)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))))


def kl_gradient(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)."""
    q, num = _student_t(y)
    w = (p - q) * num
    return 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)


def tsne(x: np.ndarray, labels: Sequence[int], cfg: TsneConfig, class_names: Sequence[str] = ()) -> Projection:
    x = np.asarray(x, dtype=np.float64)
    _, p = conditional_affinities(x, cfg.perplexity)
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    trace = []
    for it in range(cfg.iters):
        if it % cfg.kl_every == 0:
            trace.append(kl_divergence(p, y))
        early = it < cfg.exaggeration_iters
        g = kl_gradient(p * cfg.exaggeration if early else p, y)
        mom = cfg.momentum_early if early else cfg.momentum_late
        # delta-bar-delta gains as in the reference implementation
        flip = np.sign(g) != np.sign(velocity)
        gains = np.maximum(np.where(flip, gains + 0.2, gains * 0.8), 0.01)
        velocity = mom * velocity - cfg.learning_rate * gains * g
        y = y + velocity
        y = y - y.mean(axis=0)
    trace.append(kl_divergence(p, y))
    if not np.isfinite(y).all():
        raise NumericError("t-SNE diverged to non-finite coordinates")
    return Projection(y, np.asarray(labels, dtype=np.int64), tuple(trace), tuple(class_names))


def project_corpus(model: Model, features: FeatureMatrix, cfg: TsneConfig) -> Projection:
    with nd.no_grad():
        emb = embed(model, features.features).data
    return tsne(emb, features.labels, cfg, features.class_names)


def emit_projection(proj: Projection, path: str | Path) -> Path:
    """CSV ``x,y,label,class_name`` with 6-decimal coordinates plus a KL-trace JSON sidecar."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PROJECTION_HEADER)
    names = proj.class_names
    for (px, py), label in zip(proj.points, proj.labels):
        name = names[label] if label < len(names) else str(label)
        writer.writerow([f"{px:.6f}", f"{py:.6f}", int(label), name])
    sidecar = path.with_suffix(".json") if path.suffix else path.with_name(path.name + ".json")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue(), encoding="utf-8", newline="")
        sidecar.write_text(
            json.dumps({"kl_trace": list(proj.kl_trace), "class_names": list(names)}, indent=2) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise DataError(f"cannot write projection to {path}: {exc}") from exc
    return path


def read_projection(path: str | Path) -> Projection:
    path = Path(path)
    sidecar = path.with_suffix(".json") if path.suffix else path.with_name(path.name + ".json")
    try:
        rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
        meta = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    except OSError as exc:
        raise DataError(f"cannot read projection {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != PROJECTION_HEADER:
        raise DataError(f"{path}: unexpected header {rows[0] if rows else None}")
    body = rows[1:]
    points = np.array([[float(r[0]), float(r[1])] for r in body]).reshape(-1, 2)
    labels = np.array([int(r[2]) for r in body], dtype=np.int64)
    return Projection(points, labels, tuple(meta.get("kl_trace", ())), tuple(meta.get("class_names", ())))
