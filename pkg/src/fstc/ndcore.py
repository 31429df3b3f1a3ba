"""Dense float64 tensors with reverse-mode autodiff.

Every primitive records a vector-Jacobian product written in terms of other
primitives.  ``grad`` replays those products either with recording switched
off (first order, cheap) or on (``create_graph=True``), in which case the
returned gradients are themselves differentiable and a second ``grad`` call
yields exact second derivatives.  That one extra level is what MAML needs.

Non-finite values are rejected at every op boundary.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "ParamSet",
    "no_grad",
    "enable_grad",
    "is_recording",
    "tensor",
    "add",
    "add_scalar",
    "sub",
    "mul",
    "scale",
    "neg",
    "scale_by",
    "sumsq",
    "matmul",
    "transpose",
    "tanh",
    "exp",
    "log",
    "reciprocal",
    "clamp_min",
    "relu",
    "sum",
    "mean",
    "expand_cols",
    "softmax_rows",
    "cross_entropy",
    "sqdist",
    "with_value",
    "grad",
    "grad_through_grad",
    "sgd_step",
]

_state = threading.local()


def is_recording() -> bool:
    return getattr(_state, "recording", True)


@contextmanager
def _recording(flag: bool) -> Iterator[None]:
    previous = is_recording()
    _state.recording = flag
    try:
        yield
    finally:
        _state.recording = previous


def no_grad():
    """Context manager under which no op records graph edges."""
    return _recording(False)


def enable_grad():
    return _recording(True)


VJP = Callable[["Tensor"], Sequence["Tensor | None"]]


class Tensor:
    """Immutable row-major float64 array plus the graph edge that produced it."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "_first_order", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError("tensor constructed from non-finite values")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: VJP | None = None
        self._first_order = False
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self, requires_grad: bool = False) -> Tensor:
        return Tensor(self.data, requires_grad=requires_grad)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp: VJP, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    data.setflags(write=False)
    out.data = data
    out._op = op
    out._first_order = any(p._first_order for p in parents)
    if is_recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _const(data: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=np.float64)
    data.setflags(write=False)
    t.data = data
    t.requires_grad = False
    t._parents = ()
    t._vjp = None
    t._first_order = False
    t._op = "const"
    return t


# ---------------------------------------------------------------- primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a row bias of length ``a.shape[1]``."""
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return _make(a.data + b.data, (a, b), lambda g: (g, sum(g, axis=0)), "add_bias")
    raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, neg(g)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return _make(a.data * b.data, (a, b), lambda g: (mul(g, b), mul(g, a)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (scale(g, c),), "scale")


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every element of ``a`` by the scalar tensor ``s``."""
    if s.size != 1:
        raise DimensionError(f"scale_by needs a scalar factor, got shape {s.shape}")
    return _make(
        a.data * s.data.reshape(()),
        (a, s),
        lambda g: (scale_by(g, s), _reshape_scalar(sum(mul(g, a)), s.shape)),
        "scale_by",
    )


def _reshape_scalar(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    if t.shape == shape:
        return t
    return _make(t.data.reshape(shape), (t,), lambda g: (_reshape_scalar(g, t.shape),), "reshape")


def sumsq(a: Tensor) -> Tensor:
    """Sum of squared elements."""
    return _make(np.asarray(np.vdot(a.data, a.data)), (a,), lambda g: (scale(scale_by(a, g), 2.0),), "sumsq")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
        "matmul",
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: (transpose(g),), "transpose")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def vjp(g):
        return (mul(g, add_scalar(neg(mul(out, out)), 1.0)),)

    out = _make(out_data, (a,), vjp, "tanh")
    return out


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        value = np.exp(a.data)
    out = _make(value, (a,), lambda g: (mul(g, out),), "exp")
    return out


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0.0):
        raise NumericError("reciprocal of zero")
    out = _make(1.0 / a.data, (a,), lambda g: (neg(mul(g, mul(out, out))),), "reciprocal")
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericError("log of a non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (mul(g, reciprocal(a)),), "log")


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = _const((a.data >= lo).astype(np.float64))
    return _make(np.maximum(a.data, lo), (a,), lambda g: (mul(g, mask),), "clamp_min")


def relu(a: Tensor) -> Tensor:
    """max(0, a) with subgradient 0 at the kink."""
    mask = _const((a.data > 0.0).astype(np.float64))
    return _make(a.data * mask.data, (a,), lambda g: (mul(g, mask),), "relu")


def _broadcast_scalar(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(np.full(shape, g.data.reshape(()), dtype=np.float64), (g,), lambda h: (sum(h),), "broadcast")


def sum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum of all elements, of each column (axis=0) or of each row (axis=1, kept as m x 1)."""
    if axis is None:
        shape = a.shape
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (_broadcast_scalar(g, shape),), "sum")
    if a.ndim != 2:
        raise DimensionError(f"axis sums need a matrix, got shape {a.shape}")
    m, n = a.shape
    if axis == 0:
        return _make(a.data.sum(axis=0), (a,), lambda g: (add(_const(np.zeros((m, n))), g),), "sum0")
    if axis == 1:
        return _make(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (expand_cols(g, n),), "sum1")
    raise DimensionError(f"invalid axis {axis}")


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.size)


def expand_cols(v: Tensor, n: int) -> Tensor:
    """Repeat an m x 1 column n times."""
    if v.ndim != 2 or v.shape[1] != 1:
        raise DimensionError(f"expand_cols needs an m x 1 column, got {v.shape}")
    return matmul(v, _const(np.ones((1, n))))


def softmax_rows(logits: Tensor) -> Tensor:
    if logits.ndim != 2:
        raise DimensionError(f"softmax_rows needs a matrix, got shape {logits.shape}")
    if not np.isfinite(logits.data).all():
        raise NumericError("softmax_rows received non-finite logits")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    c = logits.shape[1]

    def vjp(g):
        gs = mul(g, out)
        return (mul(out, sub(g, expand_cols(sum(gs, axis=1), c))),)

    out = _make(probs, (logits,), vjp, "softmax")
    return out


def cross_entropy(probs: Tensor, labels: Sequence[int] | np.ndarray, smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy against epsilon-smoothed one-hot targets.

    Probabilities are clamped at 1e-12 before the log.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ContractError(f"label smoothing must lie in [0, 1), got {smoothing}")
    if probs.ndim != 2:
        raise DimensionError(f"cross_entropy needs an m x c matrix, got {probs.shape}")
    m, c = probs.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (m,):
        raise DimensionError(f"{labels.shape[0] if labels.ndim else 0} labels for {m} rows")
    if m and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    target = np.full((m, c), smoothing / c)
    target[np.arange(m), labels] = 1.0 - smoothing + smoothing / c
    logp = log(clamp_min(probs, 1e-12))
    return scale(sum(mul(_const(target), logp)), -1.0 / m)


def sqdist(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between rows of ``a`` (m x e) and ``b`` (n x e)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"sqdist shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    e = a.shape[1]

    def vjp(g):
        # d/da_i = 2 (a_i * sum_j g_ij - sum_j g_ij b_j); symmetric for b with g^T
        da = scale(sub(mul(a, expand_cols(sum(g, axis=1), e)), matmul(g, b)), 2.0)
        gt = transpose(g)
        db = scale(sub(mul(b, expand_cols(sum(gt, axis=1), e)), matmul(gt, a)), 2.0)
        return (da, db)

    return _make(d, (a, b), vjp, "sqdist")


def with_value(source: Tensor, value: np.ndarray | Tensor) -> Tensor:
    """A tensor holding ``value`` whose gradient flows unchanged into ``source``.

    This is the identity-Jacobian shortcut of first-order MAML.
    """
    value = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if value.shape != source.shape:
        raise DimensionError(f"with_value shape mismatch: {source.shape} vs {value.shape}")
    out = _make(value.copy(), (source,), lambda g: (g,), "with_value")
    out._first_order = True
    return out


# ---------------------------------------------------------------- parameters


class ParamSet:
    """Ordered, named collection of tensors."""

    __slots__ = ("_names", "_tensors")

    def __init__(self, entries: Iterable[tuple[str, Tensor | np.ndarray]]):
        names: list[str] = []
        tensors: list[Tensor] = []
        for name, value in entries:
            if name in names:
                raise ContractError(f"duplicate parameter name {name!r}")
            names.append(name)
            tensors.append(_as_tensor(value))
        self._names = tuple(names)
        self._tensors = tuple(tensors)

    @classmethod
    def leaves(cls, entries: Iterable[tuple[str, np.ndarray]]) -> ParamSet:
        return cls((name, Tensor(value, requires_grad=True)) for name, value in entries)

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def tensors(self) -> tuple[Tensor, ...]:
        return self._tensors

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(t.shape for t in self._tensors)

    @property
    def num_params(self) -> int:
        return int(np.sum([t.size for t in self._tensors]))

    def items(self):
        return zip(self._names, self._tensors)

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._names

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[self._names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}{list(t.shape)}" for n, t in self.items())
        return f"ParamSet({inner})"

    def check_layout(self, other: ParamSet) -> None:
        if self._names != other._names or self.shapes != other.shapes:
            raise ContractError(
                f"parameter layouts differ: {list(zip(self._names, self.shapes))} "
                f"vs {list(zip(other._names, other.shapes))}"
            )

    def zip_map(self, other: ParamSet, fn: Callable[[Tensor, Tensor], Tensor]) -> ParamSet:
        self.check_layout(other)
        return ParamSet((n, fn(a, b)) for n, a, b in zip(self._names, self._tensors, other._tensors))

    def map(self, fn: Callable[[Tensor], Tensor]) -> ParamSet:
        return ParamSet((n, fn(t)) for n, t in self.items())

    def add(self, other: ParamSet) -> ParamSet:
        return self.zip_map(other, add)

    def sub(self, other: ParamSet) -> ParamSet:
        return self.zip_map(other, sub)

    def scale(self, c: float) -> ParamSet:
        return self.map(lambda t: scale(t, c))

    def axpy(self, alpha: float, other: ParamSet) -> ParamSet:
        """self + alpha * other."""
        return self.zip_map(other, lambda a, b: add(a, scale(b, alpha)))

    def detach(self, requires_grad: bool = True) -> ParamSet:
        return ParamSet((n, Tensor(t.data, requires_grad=requires_grad)) for n, t in self.items())

    def replace(self, **updates: Tensor) -> ParamSet:
        return ParamSet((n, updates.get(n, t)) for n, t in self.items())

    def select(self, names: Iterable[str]) -> ParamSet:
        names = list(names)
        return ParamSet((n, self[n]) for n in names)

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.items()}

    def flat(self) -> np.ndarray:
        if not self._tensors:
            return np.zeros(0)
        return np.concatenate([t.data.reshape(-1) for t in self._tensors])

    def with_flat(self, vector: np.ndarray, requires_grad: bool = True) -> ParamSet:
        """Same layout, values taken from a flat vector (inverse of ``flat``)."""
        need = int(np.sum([t.size for t in self._tensors]))
        if len(vector) != need:
            raise DimensionError(f"flat vector has {len(vector)} values, layout needs {need}")
        out, offset = [], 0
        for n, t in self.items():
            chunk = np.asarray(vector[offset : offset + t.size]).reshape(t.shape)
            out.append((n, Tensor(chunk, requires_grad=requires_grad)))
            offset += t.size
        return ParamSet(out)

    def bit_equal(self, other: ParamSet) -> bool:
        if self._names != other._names or self.shapes != other.shapes:
            return False
        return all(
            a.data.tobytes() == b.data.tobytes() for a, b in zip(self._tensors, other._tensors)
        )


# ---------------------------------------------------------------- gradients


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(loss: Tensor, params: ParamSet, create_graph: bool = False) -> ParamSet:
    """Gradient of a scalar ``loss`` with respect to every tensor in ``params``.

    With ``create_graph=True`` the backward pass is itself recorded, so the
    result can be differentiated again.  Parameters the loss does not reach
    get zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"grad needs a scalar loss, got shape {loss.shape}")
    targets = {id(t) for t in params.tensors}
    acc: dict[int, Tensor] = {id(loss): _const(np.ones(loss.shape))}
    if loss.requires_grad and id(loss) not in targets:
        with _recording(create_graph):
            for node in reversed(_topo_order(loss)):
                g = acc.get(id(node))
                if g is None or id(node) in targets or node._vjp is None:
                    continue
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = acc.get(id(parent))
                    acc[id(parent)] = pg if prev is None else add(prev, pg)
    out = []
    for name, t in params.items():
        g = acc.get(id(t))
        if g is None:
            g = _const(np.zeros(t.shape))
        elif not create_graph:
            g = _const(g.data)
            g._first_order = True
        out.append((name, g))
    return ParamSet(out)


def grad_through_grad(meta_loss: Tensor, params: ParamSet) -> ParamSet:
    """Exact derivative of a loss whose construction contains recorded ``grad`` calls."""
    if meta_loss._first_order:
        raise ContractError(
            "meta-loss depends on a gradient recorded in first-order mode; record the inner "
            "gradient with create_graph=True or use the first-order (FOMAML) meta-gradient instead"
        )
    return grad(meta_loss, params, create_graph=False)


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> ParamSet:
    """Plain gradient step ``theta - lr * g``; differentiable when recording."""
    if lr < 0:
        raise ContractError(f"learning rate must be non-negative, got {lr}")
    return params.zip_map(grads, lambda p, g: sub(p, scale(g, lr)))
