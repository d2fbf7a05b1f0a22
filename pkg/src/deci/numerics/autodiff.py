"""Dynamic-tape reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor`. When gradient recording is on and
at least one input requires a gradient, the output keeps references to its
inputs plus a closure mapping the output gradient to input gradients.
:func:`backward` walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.special

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- basic properties -------------------------------------------------
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
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op.

    ``backward(g)`` must return one gradient (or None) per parent; shapes may be
    broadcast versions of the parent shapes.
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every tensor that ``root`` depends on.

    Leaf gradients accumulate across calls; reset them with ``zero_grad``.
    """
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg, dtype=np.float64), p.shape)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data**exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = scipy.special.expit(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return make_op(out, (a,), lambda g: (g * scipy.special.expit(a.data),))


def logsigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return make_op(out, (a,), lambda g: (g * scipy.special.expit(-a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sinh(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.sinh(a.data), (a,), lambda g: (g * np.cosh(a.data),))


def cosh(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.cosh(a.data), (a,), lambda g: (g * np.sinh(a.data),))


def arcsinh(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.arcsinh(a.data), (a,), lambda g: (g / np.sqrt(1.0 + a.data * a.data),))


def ndtr(a) -> Tensor:
    """Standard normal CDF."""
    a = as_tensor(a)
    pdf = np.exp(-0.5 * a.data * a.data) / np.sqrt(2.0 * np.pi)
    return make_op(scipy.special.ndtr(a.data), (a,), lambda g: (g * pdf,))


def log_ndtr(a) -> Tensor:
    a = as_tensor(a)
    out = scipy.special.log_ndtr(a.data)

    def _bw(g):
        log_pdf = -0.5 * a.data * a.data - 0.5 * np.log(2.0 * np.pi)
        return (g * np.exp(log_pdf - out),)

    return make_op(out, (a,), _bw)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return make_op(out, (a,), lambda g: (np.where(pos, g, slope * g),))


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` holds, else from ``b``. ``cond`` is not differentiated."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)
    return make_op(out, (a, b), lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip values; the gradient is passed only where no clipping happened."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return make_op(out, (a,), lambda g: (np.where(inside, g, 0.0),))


def straight_through(value: np.ndarray, surrogate: Tensor) -> Tensor:
    """Forward ``value`` exactly; backward route the gradient to ``surrogate``."""
    surrogate = as_tensor(surrogate)
    value = np.asarray(value, dtype=np.float64)
    if value.shape != surrogate.shape:
        raise ValueError("straight-through value and surrogate shapes differ")
    return make_op(value, (surrogate,), lambda g: (g,))


# -- reductions and shape ops --------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return make_op(out, (a,), _bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return make_op(out, (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return make_op(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_op(np.array(out, copy=True), (a,), _bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(out, ts, _bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def _bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_op(out, ts, _bw)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return make_op(np.cumsum(a.data, axis=axis), (a,), _bw)


def pad_last(a, before: float | None, after: float | None) -> Tensor:
    """Append constant columns on the last axis (gradient-free constants)."""
    a = as_tensor(a)
    parts = []
    lead = a.shape[:-1] + (1,)
    if before is not None:
        parts.append(np.full(lead, before))
    parts.append(a.data)
    if after is not None:
        parts.append(np.full(lead, after))
    out = np.concatenate(parts, axis=-1)
    start = 1 if before is not None else 0
    n = a.shape[-1]
    return make_op(out, (a,), lambda g: (g[..., start : start + n],))


def gather_rows(table, idx: np.ndarray) -> Tensor:
    """``out[..., j] = table[j, idx[..., j]]`` for a 2-D ``table`` of shape (n, m)."""
    table = as_tensor(table)
    n, m = table.shape
    idx = np.asarray(idx, dtype=np.int64)
    cols = np.arange(n)
    out = table.data[cols, idx]

    def _bw(g):
        flat = (cols * m + idx).ravel()
        full = np.bincount(flat, weights=np.asarray(g).ravel(), minlength=n * m)
        return (full.reshape(n, m),)

    return make_op(out, (table,), _bw)


# -- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if b.ndim == 2 and a.ndim > 2:
        # shared right operand: fold batch dims so BLAS sees one GEMM
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))

        def _bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return make_op(out, (a, b), _bw)
    out = a.data @ b.data

    def _bw(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return make_op(out, (a, b), _bw)


def node_mix(latent, w) -> Tensor:
    """``out[b, i, :] = sum_j w[j, i] * latent[b, j, :]`` for latent (B, D, L), w (D, D)."""
    latent, w = as_tensor(latent), as_tensor(w)
    out = np.tensordot(latent.data, w.data, axes=([1], [0])).transpose(0, 2, 1)

    def _bw(g):
        g_lat = np.tensordot(g, w.data, axes=([1], [1])).transpose(0, 2, 1)
        g_w = np.tensordot(latent.data, g, axes=([0, 2], [0, 2]))
        return g_lat, g_w

    return make_op(np.ascontiguousarray(out), (latent, w), _bw)


def trace_expm(a) -> Tensor:
    """``tr(exp(A))`` for a square matrix, via scaling-and-squaring Pade expm."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"trace_expm needs a square matrix, got shape {a.shape}")
    e = scipy.linalg.expm(a.data)
    return make_op(np.trace(e), (a,), lambda g: (g * e.T,))


# -- normalisation and softmax -------------------------------------------


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = a.data - scipy.special.logsumexp(a.data, axis=axis, keepdims=True)

    def _bw(g):
        sm = np.exp(out)
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (a,), _bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = scipy.special.softmax(a.data, axis=axis)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (a,), _bw)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    lse = scipy.special.logsumexp(a.data, axis=axis, keepdims=True)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(a.data - lse),)

    out = lse if keepdims else np.squeeze(lse, axis=axis)
    return make_op(out, (a,), _bw)


def normalize_last(a, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance normalisation over the last axis (layer-norm core)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    out = centered * inv

    def _bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gy),)

    return make_op(out, (a,), _bw)


def parameters_of(items: Iterable) -> list[Tensor]:
    return [p for p in items if isinstance(p, Tensor) and p.requires_grad]
