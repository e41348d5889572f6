"""Dense float64 tensors with a reverse-mode gradient tape.

Every op is a plain function over :class:`Tensor`. When a :class:`GradientTape`
is active and at least one input is tracked (a parameter, or the output of a
recorded op), the op appends a node holding its parents and a backward
closure. Outside a tape, ops are plain numpy computations.

    with GradientTape() as tape:
        loss = tsum(mul(w, w))
    tape.backward(loss)        # w.grad == 2 * w.data
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64

_ACTIVE: list["GradientTape"] = []


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self._tape: GradientTape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents, backward):
        self.parents = parents
        self.backward = backward


class GradientTape:
    """Records ops in execution order; nodes are therefore topologically sorted."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def _record(out: Tensor, parents: tuple[Tensor, ...], fn) -> Tensor:
    if not _ACTIVE:
        return out
    tape = _ACTIVE[-1]
    if not any(p.requires_grad or p._tape is tape for p in parents):
        return out
    out._tape = tape
    out.tape_id = len(tape.nodes)
    tape.nodes.append(_Node(parents, fn))
    return out


def backward(tape: GradientTape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every parameter on the tape.

    Parameters that appear on the tape but do not influence ``loss`` end up
    with an all-zero gradient.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape:
        raise ValueError("loss was not recorded on this gradient tape")
    nodes = tape.nodes
    for node in nodes:
        for p in node.parents:
            if p.requires_grad and p._tape is not tape and p.grad is None:
                p.grad = np.zeros_like(p.data)
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[loss.tape_id] = np.ones_like(loss.data)
    for idx in range(loss.tape_id, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        grads[idx] = None
        node = nodes[idx]
        for p, pg in zip(node.parents, node.backward(g)):
            if pg is None:
                continue
            if p._tape is tape:
                cur = grads[p.tape_id]
                grads[p.tape_id] = pg if cur is None else cur + pg
            elif p.requires_grad:
                p.grad += pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(Tensor(-a.data), (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(Tensor(a.data * c), (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(Tensor(a.data * mask), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record(Tensor(y), (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _record(Tensor(np.log(x)), (a,), lambda g: (g / x,))


def clip(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp values; gradient passes only where the input was inside the range."""
    y = np.clip(a.data, lo, hi)
    inside = y == a.data
    return _record(Tensor(y), (a,), lambda g: (g * inside,))


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` holds, else from ``b`` (``cond`` is constant)."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = Tensor(np.where(cond, a.data, b.data))
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                   _unbroadcast(np.where(cond, 0.0, g), b.shape)),
    )


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = Tensor(np.where(mask, value, a.data))
    return _record(out, (a,), lambda g: (np.where(mask, 0.0, g),))


# reductions ------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(Tensor(y), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    y = np.log(s) + m

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * (e / s),)

    return _record(Tensor(y if keepdims else np.squeeze(y, axis=axis)), (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(Tensor(y), (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _record(Tensor(y), (a,), bw)


# linear algebra and shape ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return _record(Tensor(a.data.reshape(shape)), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(Tensor(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def expand_dims(a: Tensor, axis: int) -> Tensor:
    return reshape(a, np.expand_dims(a.data, axis).shape)


def _is_basic(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return all(k is None or k is Ellipsis or isinstance(k, (int, slice)) for k in keys)


def index(a: Tensor, key) -> Tensor:
    """``a[key]`` for basic or advanced numpy indexing; backward scatter-adds."""
    basic = _is_basic(key)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _record(Tensor(a.data[key]), (a,), bw)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    return _record(Tensor(table.data[ids]), (table,), bw)


def take_along(a: Tensor, idx: np.ndarray, axis: int = -1) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        ax = axis % a.ndim
        grid = list(np.ix_(*[np.arange(n) for n in idx.shape]))
        grid[ax] = idx
        np.add.at(full, tuple(grid), g)
        return (full,)

    return _record(Tensor(np.take_along_axis(a.data, idx, axis)), (a,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def bw(g):
        n = xd.shape[-1]
        gx_hat = g * gamma.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _record(out, (x, gamma, beta), bw)
