"""Reverse-mode automatic differentiation over numpy arrays.

Every operation on :class:`Tensor` records its parents and a closure that
pushes the output gradient back to them. :func:`backward` walks the recorded
graph in reverse topological order.
"""

import contextlib

import numpy as np

from ..errors import GraphNotRecorded, ShapeMismatch

MAX_DIMS = 3
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim > MAX_DIMS:
            raise ShapeMismatch(f"tensors have at most {MAX_DIMS} dims, got shape {data.shape}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __float__(self):
        return float(self.data)

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return mul(self, 1.0 / _data(o))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled:
        live = tuple(p for p in parents if p.requires_grad)
        if live:
            out.requires_grad = True
            out._parents = live
            out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# Elementwise
# ----------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), back)


def square(a):
    a = as_tensor(a)

    def back(g):
        _accum(a, 2.0 * a.data * g)

    return _result(a.data * a.data, (a,), back)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def back(g):
        _accum(a, g * out_data)

    return _result(out_data, (a,), back)


def log(a):
    a = as_tensor(a)

    def back(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), back)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)

    return _result(np.where(mask, a.data, 0.0), (a,), back)


def sigmoid(a):
    a = as_tensor(a)
    out_data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def back(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _result(out_data, (a,), back)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def back(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _result(out_data, (a,), back)


# ----------------------------------------------------------------------------
# Linear algebra and shape
# ----------------------------------------------------------------------------

def matmul(a, b):
    """2-D matrix product (n, k) @ (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")

    def back(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), back)


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape

    def back(g):
        _accum(a, g.reshape(src))

    return _result(a.data.reshape(shape), (a,), back)


def getitem(a, key):
    a = as_tensor(a)

    def back(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[key] += g

    return _result(a.data[key], (a,), back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=axis))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, back)


def total(a):
    a = as_tensor(a)

    def back(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _result(np.sum(a.data), (a,), back)


def mean(a):
    a = as_tensor(a)
    n = a.data.size

    def back(g):
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _result(np.mean(a.data), (a,), back)


# ----------------------------------------------------------------------------
# Backward pass
# ----------------------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss, params=None):
    """Populate ``.grad`` on every tensor reachable from the scalar ``loss``.

    Gradients are recomputed from scratch (previous values are cleared). When
    ``params`` (a mapping of name to leaf tensor) is given, returns a dict of
    gradients for each, with zeros for parameters the loss does not reach.
    """
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise GraphNotRecorded("loss has no recorded graph leading to trainable parameters")
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    if params is not None:
        for p in params.values():
            p.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if params is None:
        return None
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
