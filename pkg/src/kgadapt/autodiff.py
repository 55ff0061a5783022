"""Define-by-run reverse-mode differentiation over numpy arrays.

Only the primitives the reasoning model needs are provided. Every op records
its parents and a closure that pushes the output gradient back to them;
``Tensor.backward`` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior grads are no longer needed once pushed to parents
                if node._parents:
                    node.grad = None

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    """np.matmul semantics with batch broadcasting; operands must be >= 2-D."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), bw)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), bw)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)

    def bw(g):
        x._accumulate(np.transpose(g, inverse))

    return _result(np.transpose(x.data, axes), (x,), bw)


def concat(xs: Iterable, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        for x, part in zip(xs, np.split(g, bounds, axis=axis)):
            if x.requires_grad:
                x._accumulate(part)

    return _result(np.concatenate([x.data for x in xs], axis=axis), xs, bw)


def take(x, index) -> Tensor:
    """Gather along axis 0: ``x.data[index]`` for an integer index array."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accumulate(full)

    return _result(x.data[index], (x,), bw)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def bw(g):
        x._accumulate(g * out)

    return _result(out, (x,), bw)


def log(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        x._accumulate(g / x.data)

    return _result(np.log(x.data), (x,), bw)


def power(x, p: float) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        x._accumulate(g * p * x.data ** (p - 1))

    return _result(x.data**p, (x,), bw)


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    neg = x.data <= 0
    out = np.where(neg, alpha * np.expm1(np.minimum(x.data, 0.0)), x.data)

    def bw(g):
        x._accumulate(g * np.where(neg, out + alpha, 1.0))

    return _result(out, (x,), bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> Tensor:
    """tanh approximation of GELU."""
    x = as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du))

    return _result(out, (x,), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        sm = np.exp(out)
        x._accumulate(g - sm * g.sum(axis=axis, keepdims=True))

    return _result(out, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    mu = mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = mean(xc * xc, axis=-1, keepdims=True)
    return xc * power(var + eps, -0.5) * gamma + beta


def numerical_grad(f: Callable[[], float], arr: np.ndarray, index, h: float = 1e-5) -> float:
    """Central finite difference of ``f`` w.r.t. ``arr[index]`` (mutated in place, restored)."""
    old = arr[index]
    arr[index] = old + h
    fp = f()
    arr[index] = old - h
    fm = f()
    arr[index] = old
    return (fp - fm) / (2 * h)
