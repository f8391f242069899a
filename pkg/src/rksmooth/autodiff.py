"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation applied to tensors that live on it;
:func:`backward` walks the record once in reverse and accumulates gradients.
Tensors without a tape are constants: operations involving only constants
are evaluated eagerly and nothing is recorded.

This is enough to unroll explicit Runge-Kutta steps and differentiate a
loss through all of them (discretize-then-optimize).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import NonScalarLossError, ShapeError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tape:
    """Append-only record of operations. Single writer; not thread-safe."""

    def __init__(self):
        # each entry: (output tensor, parent tensors, vjp) where
        # vjp(grad_out) -> tuple of grads aligned with parents
        self.nodes: list[tuple["Tensor", tuple["Tensor", ...], Callable | None]] = []

    def __len__(self):
        return len(self.nodes)

    def variable(self, value) -> "Tensor":
        """Register a leaf whose gradient is wanted."""
        t = Tensor(value)
        t.tape = self
        t.index = len(self.nodes)
        self.nodes.append((t, (), None))
        return t

    def _record(self, value, parents, vjp) -> "Tensor":
        t = Tensor(value)
        t.tape = self
        t.index = len(self.nodes)
        self.nodes.append((t, parents, vjp))
        return t


class Tensor:
    """A float64 array, optionally attached to a :class:`Tape`."""

    __slots__ = ("value", "tape", "index", "grad")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape: Tape | None = None
        self.index: int | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def requires_grad(self):
        return self.tape is not None

    def __repr__(self):
        where = f"node {self.index}" if self.tape is not None else "const"
        return f"Tensor(shape={self.shape}, {where})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if _is_scalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs: Tensor) -> Tape | None:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = x.tape
    return tape


def _apply(value, parents: Sequence[Tensor], vjp) -> Tensor:
    tape = _tape_of(*parents)
    if tape is None:
        return Tensor(value)
    return tape._record(value, tuple(parents), vjp)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- primitives -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _apply(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _apply(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _apply(
        av * bv, (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a, k: float) -> Tensor:
    a = as_tensor(a)
    k = float(k)
    return _apply(a.value * k, (a,), lambda g: (g * k,))


def matmul(a, b) -> Tensor:
    """``(n, k) @ (k, m)``; a 1-D right operand is treated as a column."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def vjp(g):
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _apply(av @ bv, (a, b), vjp)


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    mask = a.value > 0.0
    return _apply(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)
    return _apply(t, (a,), lambda g: (g * (1.0 - t * t),))


def gelu(a) -> Tensor:
    """Tanh approximation of GELU.

    gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    """
    a = as_tensor(a)
    x = a.value
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)
    dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return _apply(out, (a,), lambda g: (g * dydx,))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along the last axis; all other dimensions must agree."""
    parts = [as_tensor(p) for p in parts]
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat: incompatible shapes {parts[0].shape} and {p.shape}"
            )
    if axis not in (-1, parts[0].value.ndim - 1):
        raise ValueError("concat only supports the last axis")
    widths = [p.shape[-1] for p in parts]
    splits = np.cumsum(widths)[:-1]
    return _apply(
        np.concatenate([p.value for p in parts], axis=-1), parts,
        lambda g: tuple(np.split(g, splits, axis=-1)),
    )


def mean_pool(a, axis: int = -1) -> Tensor:
    """Average over one axis (the dense stand-in for global average pooling)."""
    a = as_tensor(a)
    n = a.shape[axis]
    shape = a.shape
    return _apply(
        a.value.mean(axis=axis), (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),),
    )


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: incompatible shapes {logits.shape} and {labels.shape}"
        )
    z = logits.value
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsumexp - shifted[rows, labels]))

    def vjp(g):
        p = np.exp(shifted - logsumexp[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _apply(np.array(loss), (logits,), vjp)


# --- reverse pass -----------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> None:
    """Fill ``.grad`` of every tensor on ``tape`` with d(loss)/d(tensor).

    Nodes that do not influence ``loss`` get a zero gradient.
    """
    if loss.value.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.value)
    for idx in range(loss.index, -1, -1):
        out, parents, vjp = tape.nodes[idx]
        g = grads[idx]
        out.grad = g if g is not None else np.zeros_like(out.value)
        if g is None or vjp is None:
            continue
        for parent, pg in zip(parents, vjp(g)):
            if parent.tape is None:
                continue
            j = parent.index
            grads[j] = pg if grads[j] is None else grads[j] + pg
        grads[idx] = None
    for out, _, _ in tape.nodes[loss.index + 1:]:
        out.grad = np.zeros_like(out.value)

