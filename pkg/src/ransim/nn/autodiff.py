"""Small reverse-mode autodiff engine on float64 numpy arrays.

Only the operations the two models need are implemented.  Graphs are built
eagerly; calling ``backward()`` on a scalar fills ``grad`` on every reachable
tensor that requires it.
"""
from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "concat", "stack", "softmax", "mse", "cross_entropy"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None,
                 name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    # -- introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def item(self) -> float:
        return float(self.data)

    # -- graph mechanics ------------------------------------------------

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        self._accum(np.ones_like(self.data))
        for t in reversed(order):
            if t._backward is not None:
                t._backward(t.grad)

    def zero_grad(self):
        self.grad = None

    # -- arithmetic -----------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = self._lift(other)

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))
        return Tensor(self.data + other.data, parents=(self, other),
                      backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accum(-g)
        return Tensor(-self.data, parents=(self,), backward=bwd)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))
        return Tensor(self.data * other.data, parents=(self, other),
                      backward=bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(
                    -g * self.data / other.data ** 2, other.data.shape))
        return Tensor(self.data / other.data, parents=(self, other),
                      backward=bwd)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, k: float):
        def bwd(g):
            self._accum(g * k * self.data ** (k - 1))
        return Tensor(self.data ** k, parents=(self,), backward=bwd)

    def __matmul__(self, other):
        other = self._lift(other)

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(
                    g @ other.data.swapaxes(-1, -2), self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(
                    self.data.swapaxes(-1, -2) @ g, other.data.shape))
        return Tensor(self.data @ other.data, parents=(self, other),
                      backward=bwd)

    # -- elementwise functions -------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            self._accum(g * out_data)
        return Tensor(out_data, parents=(self,), backward=bwd)

    def log(self):
        def bwd(g):
            self._accum(g / self.data)
        return Tensor(np.log(self.data), parents=(self,), backward=bwd)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bwd(g):
            self._accum(g * 0.5 / out_data)
        return Tensor(out_data, parents=(self,), backward=bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            self._accum(g * (1.0 - out_data ** 2))
        return Tensor(out_data, parents=(self,), backward=bwd)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def bwd(g):
            self._accum(g * out_data * (1.0 - out_data))
        return Tensor(out_data, parents=(self,), backward=bwd)

    def relu(self):
        mask = self.data > 0

        def bwd(g):
            self._accum(g * mask)
        return Tensor(self.data * mask, parents=(self,), backward=bwd)

    def gelu(self):
        # tanh approximation, differentiated exactly
        c = np.sqrt(2.0 / np.pi)
        x = self.data
        inner = c * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out_data = 0.5 * x * (1.0 + t)

        def bwd(g):
            d_inner = c * (1.0 + 3 * 0.044715 * x ** 2)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner
            self._accum(g * d)
        return Tensor(out_data, parents=(self,), backward=bwd)

    # -- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        old = self.data.shape

        def bwd(g):
            self._accum(g.reshape(old))
        return Tensor(self.data.reshape(*shape), parents=(self,),
                      backward=bwd)

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)

        def bwd(g):
            self._accum(g.transpose(inv))
        return Tensor(self.data.transpose(axes), parents=(self,),
                      backward=bwd)

    def swapaxes(self, a: int, b: int):
        def bwd(g):
            self._accum(g.swapaxes(a, b))
        return Tensor(self.data.swapaxes(a, b), parents=(self,),
                      backward=bwd)

    def __getitem__(self, idx):
        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)
        return Tensor(self.data[idx], parents=(self,), backward=bwd)

    def sum(self, axis=None, keepdims=False):
        def bwd(g):
            if axis is None:
                self._accum(np.full_like(self.data, float(g)))
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape).copy())
        return Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                      parents=(self,), backward=bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None \
            else np.prod([self.data.shape[a]
                          for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))


def concat(tensors: list, axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  parents=tuple(tensors), backward=bwd)


def stack(tensors: list, axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))
    return Tensor(np.stack([t.data for t in tensors], axis=axis),
                  parents=tuple(tensors), backward=bwd)


def softmax(x: Tensor) -> Tensor:
    """Stable softmax over the last axis; rows sum to one."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        x._accum(y * (g - (g * y).sum(axis=-1, keepdims=True)))
    return Tensor(y, parents=(x,), backward=bwd)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    target = Tensor._lift(target)
    diff = pred - target
    return (diff * diff).mean()


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax.

    Computed through log-sum-exp so huge logits stay finite.
    """
    labels = np.asarray(labels, dtype=int)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n}")
    if (labels < 0).any() or (labels >= c).any():
        raise ValueError("label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = (lse - z[np.arange(n), labels]).mean()

    def bwd(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        logits._accum(float(g) * p / n)
    return Tensor(loss, parents=(logits,), backward=bwd)
