"""Minimal reverse-mode gradient engine over float64 numpy arrays.

A Tensor records the operation that produced it plus backward closures that
push gradients to its parents; Tensor.backward() walks the graph once in
reverse topological order. Only the operations the built-in classifiers need
are implemented. Everything is pure: identical inputs give bitwise-identical
data and gradients, and no op mutates its operands.
"""

from __future__ import annotations

import math

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Backpropagate from this scalar tensor, seeding with gradient 1."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
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
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def _op(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _op(a.data + b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _op(a.data - b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _op(a.data * b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _op(a.data / b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = _op(a.data @ b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad @ b.data.swapaxes(-1, -2), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ out.grad, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def negate(a: Tensor) -> Tensor:
    out = _op(-a.data, (a,), None)

    def backward():
        a._accumulate(-out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    out = _op(a.data**exponent, (a,), None)

    def backward():
        a._accumulate(out.grad * exponent * a.data ** (exponent - 1.0))

    out._backward = backward if out.requires_grad else None
    return out


def exp(a: Tensor) -> Tensor:
    out = _op(np.exp(a.data), (a,), None)

    def backward():
        a._accumulate(out.grad * out.data)

    out._backward = backward if out.requires_grad else None
    return out


def log(a: Tensor) -> Tensor:
    out = _op(np.log(a.data), (a,), None)

    def backward():
        a._accumulate(out.grad / a.data)

    out._backward = backward if out.requires_grad else None
    return out


def tanh(a: Tensor) -> Tensor:
    out = _op(np.tanh(a.data), (a,), None)

    def backward():
        a._accumulate(out.grad * (1.0 - out.data * out.data))

    out._backward = backward if out.requires_grad else None
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-form GELU; smooth everywhere, so finite differences stay honest."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = _op(0.5 * x * (1.0 + t), (a,), None)

    def backward():
        sech2 = 1.0 - t * t
        local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        a._accumulate(out.grad * local)

    out._backward = backward if out.requires_grad else None
    return out


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _op(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)

    def backward():
        grad = out.grad
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        a._accumulate(np.broadcast_to(grad, a.data.shape).copy())

    out._backward = backward if out.requires_grad else None
    return out


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _op(a.data.mean(axis=axis, keepdims=keepdims), (a,), None)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward():
        grad = out.grad
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        a._accumulate(np.broadcast_to(grad, a.data.shape) / count)

    out._backward = backward if out.requires_grad else None
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = _op(a.data.reshape(shape), (a,), None)

    def backward():
        a._accumulate(out.grad.reshape(a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    out = _op(a.data.transpose(axes), (a,), None)

    def backward():
        a._accumulate(out.grad.transpose(inverse))

    out._backward = backward if out.requires_grad else None
    return out


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup along axis 0 (embedding gather); scatter-add on backward."""
    idx = np.asarray(indices, dtype=np.int64)
    out = _op(a.data[idx], (a,), None)

    def backward():
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, out.grad)

    out._backward = backward if out.requires_grad else None
    return out


# Operator sugar so model code reads like arithmetic.
Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = div
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = negate
Tensor.__matmul__ = matmul
Tensor.__pow__ = power
Tensor.sum = reduce_sum
Tensor.mean = reduce_mean
Tensor.reshape = reshape
Tensor.transpose = transpose
Tensor.exp = exp
Tensor.log = log
Tensor.tanh = tanh
Tensor.gelu = gelu
Tensor.take_rows = take_rows
