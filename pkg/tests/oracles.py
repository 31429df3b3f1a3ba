"""Independent reference computations used by the tests."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from fstc import ndcore as nd
from fstc.ndcore import ParamSet


def central_diff(f, arrays: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of scalar ``f(dict of arrays)`` w.r.t. every entry."""
    out = {}
    for name, base in arrays.items():
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus = {k: v.copy() for k, v in arrays.items()}
            minus = {k: v.copy() for k, v in arrays.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2 * h)
        out[name] = g
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), zero when both vanish."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def max_rel_error(analytic: ParamSet, numeric: dict[str, np.ndarray]) -> float:
    return max(rel_error(analytic[n].data, numeric[n]) for n in analytic.names)


def check_grad(loss_fn, params: ParamSet, h: float = 1e-5) -> float:
    """Relative error between ``nd.grad`` and central differences over the whole gradient vector.

    A per-tensor ratio is meaningless for tensors whose gradient is exactly
    zero (rounding noise over rounding noise), hence the single global norm.
    """
    analytic = nd.grad(loss_fn(params), params)

    def f(arrays):
        with nd.no_grad():
            return loss_fn(ParamSet.leaves(list(arrays.items()))).item()

    numeric = central_diff(f, dict(params.arrays()), h)
    return rel_error(analytic.flat(), np.concatenate([numeric[n].ravel() for n in params.names]))


def brute_tfidf(texts: list[str], min_df: int, max_size: int) -> tuple[list[str], np.ndarray]:
    """Straight-line TF-IDF: regex-free tokenizer, dict counting, explicit loops."""

    def toks(text):
        out, cur = [], ""
        for ch in text.lower() + " ":
            if ("a" <= ch <= "z") or ("0" <= ch <= "9"):
                cur += ch
            else:
                if 2 <= len(cur) <= 30 and not cur.isdigit():
                    out.append(cur)
                cur = ""
        return out

    docs = [toks(t) for t in texts]
    df: dict[str, int] = {}
    for d in docs:
        for term in set(d):
            df[term] = df.get(term, 0) + 1
    terms = [t for t in df if df[t] >= min_df]
    if len(terms) > max_size:
        terms = sorted(terms, key=lambda t: (-df[t], t))[:max_size]
    terms = sorted(terms)
    n = len(docs)
    mat = np.zeros((n, len(terms)))
    for i, d in enumerate(docs):
        c = Counter(d)
        for j, t in enumerate(terms):
            mat[i, j] = c[t] * math.log(n / df[t])
        norm = math.sqrt(sum(v * v for v in mat[i]))
        if norm > 0:
            mat[i] = mat[i] / norm
    return terms, mat


def one_nn_accuracy(points: np.ndarray, labels: np.ndarray) -> float:
    d = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    return float((labels[d.argmin(axis=1)] == labels).mean())
