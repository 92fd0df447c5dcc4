"""Minimal reverse-mode automatic differentiation over numpy arrays.

A tape of Tensor nodes is built during the forward pass; ``backward()``
walks it in reverse topological order. Only the operations the two model
architectures need are implemented, with fused kernels (linear, layer norm,
softmax, cross-entropy) where a composite would be slow or unstable.

Gradient accumulation never mutates arrays in place: a node's gradient is
either the incoming array itself (single consumer) or a fresh sum, so
views handed out by backward closures are safe to share.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "add",
    "sub",
    "mul",
    "matmul",
    "linear",
    "relu",
    "reshape",
    "transpose",
    "concat",
    "getitem",
    "tsum",
    "tmean",
    "layer_norm",
    "softmax",
    "cross_entropy_mean",
    "embedding",
]


class Tensor:
    """A node in the autodiff graph: value, optional gradient, and tape links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from a scalar output through the recorded tape."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        def back(g):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

        return _make(a.data * b.data, (a, b), back)

    scalar = b

    def back_scalar(g):
        _accum(a, g * scalar)

    return _make(a.data * scalar, (a,), back_scalar)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(a.data @ b.data, (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) over the last axis, fused into 2-d GEMMs."""
    din, dout = w.data.shape
    x2 = x.data.reshape(-1, din)
    y2 = x2 @ w.data
    if b is not None:
        y2 += b.data
    out_shape = x.data.shape[:-1] + (dout,)

    def back(g):
        g2 = g.reshape(-1, dout)
        _accum(x, (g2 @ w.data.T).reshape(x.data.shape))
        _accum(w, x2.T @ g2)
        if b is not None:
            _accum(b, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(y2.reshape(out_shape), parents, back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, a.data.dtype.type(0)), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def back(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def back(g):
        _accum(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), back)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accum(t, g[tuple(index)])

    return _make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back
    )


def getitem(a: Tensor, index) -> Tensor:
    """Basic slicing only (no advanced indexing)."""

    def back(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        _accum(a, ga)

    return _make(a.data[index], (a,), back)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        count = a.data.shape[axis]

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / count, a.data.shape).copy())

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalisation over the last axis with learned gain and bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def back(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True)
        term -= xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, term * inv)

    return _make(y, (x, gain, bias), back)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        _accum(x, (g - (g * s).sum(axis=-1, keepdims=True)) * s)

    return _make(s, (x,), back)


def cross_entropy_mean(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of 2-d logits rows against index targets."""
    if logits.data.ndim != 2:
        raise ValueError("logits must be 2-d (rows, classes)")
    targets = np.asarray(targets)
    rows = logits.data.shape[0]
    if targets.shape != (rows,):
        raise ValueError("targets must have one index per logits row")
    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    ez = np.exp(z)
    sez = ez.sum(axis=-1, keepdims=True)
    log_probs = z - np.log(sez)
    picked = log_probs[np.arange(rows), targets]
    loss = -picked.mean()

    def back(g):
        p = ez / sez
        p[np.arange(rows), targets] -= 1.0
        _accum(logits, p * (g / rows))

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), back)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx)

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        _accum(table, gt)

    return _make(table.data[idx], (table,), back)
