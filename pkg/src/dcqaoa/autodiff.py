"""A small reverse-mode automatic differentiation engine on numpy arrays (float64)."""

from __future__ import annotations

import numpy as np
from scipy import sparse


class Tensor:
    """A value on the tape.

    Tensors created from data are constants unless ``requires_grad`` is set. An op whose
    inputs are all constant yields a constant, so stop-gradient is simply rebuilding a
    tensor from ``.value``.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.value)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != {self.shape}")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(id(parent))
                pending[id(parent)] = pg if prev is None else prev + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced on the tape")
    live = tuple(p for p in parents if p.requires_grad)
    out = Tensor(value, requires_grad=bool(live))
    if live:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _result(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def back(g):
        ga = _unbroadcast(g * bv, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(av * bv, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None))


def transpose(a) -> Tensor:
    return _result(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    old = a.shape
    return _result(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, idx) -> Tensor:
    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.value[idx], (a,), back)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def power(a, exponent: float) -> Tensor:
    v = a.value
    return _result(v**exponent, (a,), lambda g: (g * exponent * v ** (exponent - 1),))


def abs_(a) -> Tensor:
    v = a.value
    return _result(np.abs(v), (a,), lambda g: (g * np.sign(v),))


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(x.shape[d] != xs[0].shape[d] for d in range(x.ndim) if d != ax):
            raise ValueError("concat shape mismatch")
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(xs)))

    return _result(np.concatenate([x.value for x in xs], axis=ax), xs, back)


# --- elementwise nonlinearities ---------------------------------------------


def relu(a) -> Tensor:
    mask = a.value > 0
    return _result(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    mask = a.value > 0
    scale = np.where(mask, 1.0, slope)
    return _result(a.value * scale, (a,), lambda g: (g * scale,))


def sigmoid(a) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def sin(a) -> Tensor:
    v = a.value
    return _result(np.sin(v), (a,), lambda g: (g * np.cos(v),))


def cos(a) -> Tensor:
    v = a.value
    return _result(np.cos(v), (a,), lambda g: (-g * np.sin(v),))


def wrap(a, period: float) -> Tensor:
    """Reduce into ``[0, period)``; the derivative is 1 almost everywhere."""
    out = np.array(np.mod(a.value, period))
    out[out >= period] = 0.0  # tiny negative inputs can round up to the period itself
    return _result(out, (a,), lambda g: (g,))


def atan2(y, x) -> Tensor:
    """Elementwise ``atan2(y, x)``; the gradient at the origin is taken as zero."""
    y, x = as_tensor(y), as_tensor(x)
    r2 = y.value**2 + x.value**2
    safe = np.where(r2 > 0, r2, 1.0)
    dy = np.where(r2 > 0, x.value / safe, 0.0)
    dx = np.where(r2 > 0, -y.value / safe, 0.0)
    return _result(np.arctan2(y.value, x.value), (y, x), lambda g: (_unbroadcast(g * dy, y.shape), _unbroadcast(g * dx, x.shape)))


def softmax_rows(a, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of ``a / temperature``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = a.value / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return ((s * (g - (g * s).sum(axis=-1, keepdims=True))) / temperature,)

    return _result(s, (a,), back)


# --- graph / segment ops ----------------------------------------------------


def scatter_rows(values: np.ndarray, index: np.ndarray, num: int) -> np.ndarray:
    """``out[index[r]] += values[r]`` for every row ``r`` (fixed summation order)."""
    if values.ndim == 1:
        return np.bincount(index, weights=values, minlength=num).astype(np.float64)
    flat = values.reshape(len(index), -1)
    op = sparse.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(num, len(index)))
    return np.asarray(op @ flat).reshape((num,) + values.shape[1:])


def take_rows(a, index) -> Tensor:
    """``a[index]`` along axis 0 (gather)."""
    index = np.asarray(index, dtype=np.int64)

    return _result(a.value[index], (a,), lambda g: (scatter_rows(g, index, a.shape[0]),))


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets (scatter-add)."""
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape[0] != a.shape[0]:
        raise ValueError("one segment id per row required")
    out = scatter_rows(a.value, segments, num_segments)
    return _result(out, (a,), lambda g: (g[segments],))


def segment_mean(a, segments, num_segments: int) -> Tensor:
    segments = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(segments, minlength=num_segments).astype(float)
    inv = 1.0 / np.maximum(counts, 1.0)
    return mul(segment_sum(a, segments, num_segments), inv.reshape((-1,) + (1,) * (a.ndim - 1)))


def segment_softmax(a, segments, num_segments: int) -> Tensor:
    """Softmax of a 1-D logit vector within each segment."""
    segments = np.asarray(segments, dtype=np.int64)
    v = a.value
    mx = np.full(num_segments, -np.inf)
    np.maximum.at(mx, segments, v)
    e = np.exp(v - mx[segments])
    den = scatter_rows(e, segments, num_segments)
    s = e / den[segments]

    def back(g):
        dot = scatter_rows(g * s, segments, num_segments)
        return (s * (g - dot[segments]),)

    return _result(s, (a,), back)


def global_mean_pool(h, batch=None, num_graphs: int | None = None) -> Tensor:
    """Mean over the node axis; with ``batch`` ids, one row per graph."""
    if batch is None:
        return mean(h, axis=0, keepdims=True)
    return segment_mean(h, batch, int(num_graphs if num_graphs is not None else np.max(batch) + 1))


# --- gradient routing -------------------------------------------------------


def stop_gradient(a) -> Tensor:
    return Tensor(as_tensor(a).value)


def straight_through(hard, soft) -> Tensor:
    """Forward value ``hard``; backward passes the upstream gradient to ``soft`` unchanged."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ValueError("straight-through needs matching shapes")
    return _result(hard, (soft,), lambda g: (g,))


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)
