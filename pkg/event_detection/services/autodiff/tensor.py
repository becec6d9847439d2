"""Array-valued reverse-mode autodiff node.

Each DiffTensor produced by an operator keeps its parents and a backward
closure mapping the output gradient to one gradient per parent (None where a
parent takes no gradient). Gradients are accumulated only on leaves.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from event_detection.exceptions import ArgumentError, GraphConstructionError

MAX_AXES = 5

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, 'enabled', True)


@contextmanager
def no_grad():
    """Forward passes inside this block record no graph."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class DiffTensor:
    __slots__ = ('value', 'grad', 'requires_grad', 'name', '_parents', '_backward')

    # ndarray (op) DiffTensor dispatches to the reflected DiffTensor operator
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(np.float32)
        if value.ndim > MAX_AXES:
            raise GraphConstructionError(f'Tensors are limited to {MAX_AXES} axes, got shape {value.shape}.')
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[DiffTensor, ...] = ()
        self._backward = None

    @classmethod
    def from_op(cls, value, parents, backward) -> 'DiffTensor':
        out = cls(value)
        if is_grad_enabled() and any(parent.requires_grad for parent in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self) -> str:
        label = f' name={self.name!r}' if self.name else ''
        return f'DiffTensor(shape={self.shape}{label} requires_grad={self.requires_grad})'

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float('nan')

    def zero_grad(self):
        self.grad = None

    def detach(self) -> 'DiffTensor':
        return DiffTensor(self.value)

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.value.size != 1:
                raise ArgumentError(f'backward() without a seed gradient needs a scalar output, got shape {self.shape}.')
            grad = np.ones_like(self.value)
        if not self.requires_grad:
            return
        grads = {id(self): np.asarray(grad, dtype=self.value.dtype)}
        for node in reversed(topological_order(self)):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                node.grad = node_grad if node.grad is None else node.grad + node_grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

    # arithmetic

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)


def topological_order(root: DiffTensor) -> list[DiffTensor]:
    """Parents before children, root last; iterative so long unrolled graphs do not hit the recursion limit."""
    order: list[DiffTensor] = []
    visited: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value, like: DiffTensor | None = None) -> DiffTensor:
    if isinstance(value, DiffTensor):
        return value
    array = np.asarray(value)
    if like is not None:
        # constants follow the tensor's precision
        array = array.astype(like.dtype, copy=False)
    return DiffTensor(array)


def _operands(a, b) -> tuple[DiffTensor, DiffTensor]:
    like = a if isinstance(a, DiffTensor) else b if isinstance(b, DiffTensor) else None
    a, b = as_tensor(a, like), as_tensor(b, like)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise GraphConstructionError(f'Cannot broadcast {a.shape} with {b.shape}.') from exc
    return a, b


def add(a, b) -> DiffTensor:
    a, b = _operands(a, b)

    def backward(grad):
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)

    return DiffTensor.from_op(a.value + b.value, (a, b), backward)


def sub(a, b) -> DiffTensor:
    a, b = _operands(a, b)

    def backward(grad):
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)

    return DiffTensor.from_op(a.value - b.value, (a, b), backward)


def mul(a, b) -> DiffTensor:
    a, b = _operands(a, b)

    def backward(grad):
        return unbroadcast(grad * b.value, a.shape), unbroadcast(grad * a.value, b.shape)

    return DiffTensor.from_op(a.value * b.value, (a, b), backward)


def div(a, b) -> DiffTensor:
    a, b = _operands(a, b)

    def backward(grad):
        return (
            unbroadcast(grad / b.value, a.shape),
            unbroadcast(-grad * a.value / (b.value * b.value), b.shape),
        )

    return DiffTensor.from_op(a.value / b.value, (a, b), backward)


def power(a, exponent: float) -> DiffTensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(grad):
        return (grad * exponent * np.power(a.value, exponent - 1.0),)

    return DiffTensor.from_op(np.power(a.value, exponent), (a,), backward)
