"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by the backbones and losses are implemented.
Graphs are built eagerly; ``backward`` walks the tape in reverse
topological order.  Wrapping code in ``no_grad()`` skips graph
construction entirely, which keeps inference cheap.
"""

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the ``with`` block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        if not np.isfinite(self.value):
            raise FloatingPointError("non-finite loss; refusing to backpropagate")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.value)
                node.grad += g
            if node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn):
    if _grad_enabled and any(
        p.requires_grad or p.parents for p in parents if isinstance(p, Tensor)
    ):
        return Tensor(value, parents=parents, backward_fn=backward_fn)
    return Tensor(value)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value

    def bw(g):
        return (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape))

    return _make(out, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value

    def bw(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return _make(out, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value @ b.value

    def bw(g):
        return (g @ b.value.T, a.value.T @ g)

    return _make(out, (a, b), bw)


def spmm(sp, x):
    """Sparse @ dense with a constant scipy sparse matrix."""
    x = as_tensor(x)
    out = sp @ x.value

    def bw(g):
        return (sp.T @ g,)

    return _make(out, (x,), bw)


def gather_rows(a, idx):
    """Row lookup `a[idx]`; backward scatter-adds duplicate rows."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = a.value[idx]

    def bw(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), bw)


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0.0
    out = a.value * mask

    def bw(g):
        return (g * mask,)

    return _make(out, (a,), bw)


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw)


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(tensor_sum(a, axis=axis), 1.0 / n)


def transpose(a):
    a = as_tensor(a)
    out = a.value.T

    def bw(g):
        return (g.T,)

    return _make(out, (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.value.reshape(shape)

    def bw(g):
        return (g.reshape(a.value.shape),)

    return _make(out, (a,), bw)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw)


def cross_entropy_with_logits(logits, positive_index):
    """Mean softmax cross-entropy; positives sit at `positive_index` per row.

    Fused primitive with the analytic softmax-minus-onehot backward.
    """
    logits = as_tensor(logits)
    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(denom)
    n = z.shape[0]
    rows = np.arange(n)
    out = -logp[rows, positive_index].mean()

    def bw(g):
        soft = ez / denom
        soft[rows, positive_index] -= 1.0
        return (g * soft / n,)

    return _make(out, (logits,), bw)
