"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced.  backward()
walks the graph in reverse topological order and accumulates vector-Jacobian
products into the .grad of every leaf that requires gradients.  The engine
is deliberately small: batched matmul, broadcasting elementwise arithmetic,
a handful of nonlinearities, softmax, and the gather/scatter ops needed for
embeddings and cross-entropy.  Everything else in the package is composed
from these primitives, so one finite-difference check per primitive covers
the whole model zoo.

Two properties matter downstream and are guaranteed here:

* calling backward() twice on the same graph gives two independent,
  correctly accumulated gradient passes (the trainer reuses one forward
  graph for the generator and discriminator sub-updates), and
* no op silently promotes dtype, so float32 training stays float32 and
  checkpoint round-trips are bit-exact.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (used in evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    # -- graph construction --------------------------------------------------

    @staticmethod
    def _make(data, parents, vjp):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        return out

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        # iterative topological sort; graphs exceed the recursion limit
        order = []
        seen = set()
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                # leaf: deposit
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.data.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add(self, -other)
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return add(-self, other)
        return add(as_tensor(other), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# -- primitives --------------------------------------------------------------


def add(a, b):
    # keep python scalars out of asarray: 0-d float64 arrays would promote
    # float32 operands, breaking the no-silent-upcast guarantee
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        return Tensor._make(a.data + b, (a,), lambda g: (g,))
    if isinstance(a, (int, float)):
        b = as_tensor(b)
        return Tensor._make(a + b.data, (b,), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b):
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        return Tensor._make(a.data * b, (a,), lambda g: (g * b,))
    if isinstance(a, (int, float)):
        b = as_tensor(b)
        return Tensor._make(a * b.data, (b,), lambda g: (g * a,))
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(a.data * b.data, (a, b),
                        lambda g: (g * b.data, g * a.data))


def div(a, b):
    if isinstance(b, (int, float)):
        return mul(a, 1.0 / b)
    if isinstance(a, (int, float)):
        b = as_tensor(b)
        out = a / b.data
        return Tensor._make(out, (b,), lambda g: (-g * out / b.data,))
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return Tensor._make(out, (a, b),
                        lambda g: (g / b.data, -g * out / b.data))


def power(a, p):
    a = as_tensor(a)
    out = a.data ** p
    return Tensor._make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                np.matmul(np.swapaxes(a.data, -1, -2), g))

    return Tensor._make(np.matmul(a.data, b.data), (a, b), vjp)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return Tensor._make(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / float(count))


def reshape(a, shape):
    a = as_tensor(a)
    return Tensor._make(a.data.reshape(shape), (a,),
                        lambda g: (g.reshape(a.data.shape),))


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    return Tensor._make(np.swapaxes(a.data, ax1, ax2), (a,),
                        lambda g: (np.swapaxes(g, ax1, ax2),))


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tuple(tensors), vjp)


def take(a, idx):
    """Basic indexing (ints and slices); gradient scatters back."""
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._make(a.data[idx], (a,), vjp)


def log(a):
    a = as_tensor(a)
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0.0), (a,),
                        lambda g: (g * mask,))


_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(a):
    """Exact (erf-based) gelu; smooth, so finite differences behave."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return Tensor._make(x * cdf, (a,), vjp)


def clamp_min(a, lo):
    """max(a, lo); gradient passes only where a > lo."""
    a = as_tensor(a)
    mask = a.data > lo
    return Tensor._make(np.where(mask, a.data, lo), (a,),
                        lambda g: (g * mask,))


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor._make(out, (a,), vjp)


def embedding(table, ids):
    """Row gather: table [V, d], ids integer array -> [*ids.shape, d]."""
    table = as_tensor(table)
    ids = np.asarray(ids)

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1),
                  g.reshape(-1, table.data.shape[-1]))
        return (out,)

    return Tensor._make(table.data[ids], (table,), vjp)


def select_index(a, idx):
    """a [B, n], idx [B] integer -> [B]; picks a[i, idx[i]]."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    rows = np.arange(a.data.shape[0])

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (rows, idx), g)
        return (out,)

    return Tensor._make(a.data[rows, idx], (a,), vjp)
