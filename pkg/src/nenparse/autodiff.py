"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough operations for a small self-attention encoder and a span
scorer: broadcasting arithmetic, matmul, reductions, relu, (masked)
softmax, layer normalization, table lookups, fancy-index selection,
concatenation, and shape moves.  A fresh graph is built per forward pass;
``backward`` seeds a scalar root and accumulates gradients into every
reachable tensor with ``requires_grad``.
"""

from __future__ import annotations

import numpy as np

EPS_LAYER_NORM = 1e-5


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents
        )
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, value, name):
        super().__init__(value, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def constant(value) -> Tensor:
    return Tensor(value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(root: Tensor) -> None:
    """Backpropagate from a scalar root through the recorded graph."""
    if root.value.shape != ():
        raise ValueError("backward() needs a scalar root")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_value = a.value + b.value

    def back(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))

    return Tensor(out_value, parents=(a, b), backward=back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_value = a.value - b.value

    def back(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(-g, b.value.shape))

    return Tensor(out_value, parents=(a, b), backward=back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_value = a.value * b.value

    def back(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return Tensor(out_value, parents=(a, b), backward=back)


def scale(a: Tensor, factor: float) -> Tensor:
    a = _as_tensor(a)
    out_value = a.value * factor

    def back(g):
        _accumulate(a, g * factor)

    return Tensor(out_value, parents=(a,), backward=back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_value = a.value @ b.value

    def back(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.value.shape))
        _accumulate(b, _unbroadcast(gb, b.value.shape))

    return Tensor(out_value, parents=(a, b), backward=back)


# -- reductions and nonlinearities -------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out_value = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.value.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.value.shape).copy())

    return Tensor(out_value, parents=(a,), backward=back)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.value > 0
    out_value = np.where(mask, a.value, 0.0)

    def back(g):
        _accumulate(a, g * mask)

    return Tensor(out_value, parents=(a,), backward=back)


def softmax(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out_value = exp / exp.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * out_value).sum(axis=-1, keepdims=True)
        _accumulate(a, out_value * (g - inner))

    return Tensor(out_value, parents=(a,), backward=back)


def masked_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to mask==True positions.

    Masked positions get weight 0; rows with no valid position come out as
    all zeros rather than NaN.
    """
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.value.shape:
        raise ValueError("mask shape must match input shape")
    neg = np.where(mask, a.value, -np.inf)
    mx = neg.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    exp = np.where(mask, np.exp(neg - mx), 0.0)
    z = exp.sum(axis=-1, keepdims=True)
    out_value = exp / np.where(z > 0, z, 1.0)

    def back(g):
        inner = (g * out_value).sum(axis=-1, keepdims=True)
        _accumulate(a, out_value * (g - inner))

    return Tensor(out_value, parents=(a,), backward=back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = EPS_LAYER_NORM) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_value = gain.value * xhat + bias.value

    def back(g):
        _accumulate(bias, _unbroadcast(g, bias.value.shape))
        _accumulate(gain, _unbroadcast(g * xhat, gain.value.shape))
        gx = g * gain.value
        term = gx - gx.mean(axis=-1, keepdims=True)
        term -= xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * term)

    return Tensor(out_value, parents=(x, gain, bias), backward=back)


# -- structure ----------------------------------------------------------------


def lookup(table: Tensor, ids) -> Tensor:
    """Row gather: out[...]=table[ids[...]]; duplicate ids accumulate grads."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    out_value = table.value[ids]

    def back(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        _accumulate(table, gt)

    return Tensor(out_value, parents=(table,), backward=back)


def take(a: Tensor, index) -> Tensor:
    """Fancy-index selection a[index]; index is a tuple of integer arrays."""
    a = _as_tensor(a)
    index = tuple(np.asarray(ix, dtype=np.intp) for ix in index)
    out_value = a.value[index]

    def back(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, index, g)
        _accumulate(a, ga)

    return Tensor(out_value, parents=(a,), backward=back)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accumulate(t, piece)

    return Tensor(out_value, parents=tuple(tensors), backward=back)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out_value = a.value.reshape(shape)

    def back(g):
        _accumulate(a, g.reshape(a.value.shape))

    return Tensor(out_value, parents=(a,), backward=back)


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    out_value = a.value.transpose(axes)
    inverse = np.argsort(axes)

    def back(g):
        _accumulate(a, g.transpose(inverse))

    return Tensor(out_value, parents=(a,), backward=back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the mask is drawn once and reused by backward."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be below 1")
    keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(keep))
