"""A minimal tape-based reverse-mode autodiff over float64 numpy arrays.

Ops record themselves on the active :class:`Tape` when any input requires a
gradient. ``Tape.backward`` walks the records in exact reverse order, so
every op's output gradient is complete by the time it is consumed.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     y = sum_all(matmul(Tensor(np.eye(2)), w))
    >>> tape.backward(y)
    >>> w.grad
    array([[1., 1.],
           [1., 1.]])
"""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_from_op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._from_op = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __float__(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_TAPES: List["Tape"] = []


class Tape:
    """Records one forward pass. Use as a context manager."""

    def __init__(self):
        self.records: List[Tuple[Tensor, Tuple[Tensor, ...], Backward]] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, inputs: Tuple[Tensor, ...], backward: Backward):
        self.records.append((out, inputs, backward))

    def backward(self, loss: Tensor, grad: Optional[np.ndarray] = None):
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
        loss.grad = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for out, inputs, fn in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            if out._from_op and out is not loss:
                out.grad = None
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.data.shape:
                    raise RuntimeError(f"gradient shape {gi.shape} != input shape {inp.data.shape}")
                inp.grad = gi if inp.grad is None else inp.grad + gi
        if loss._from_op:
            loss.grad = None
        self.records.clear()


def current_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def make_op(data: np.ndarray, inputs: Sequence[Tensor], backward: Backward,
            name: str = "op") -> Tensor:
    """Wrap an op result, check it is finite, and record it if needed."""
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{name} produced non-finite values")
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    out._from_op = True
    tape = current_tape()
    if out.requires_grad and tape is not None:
        tape.record(out, tuple(inputs), backward)
    return out


def unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- primitive ops --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape),
                              unbroadcast(g * a.data, b.shape)), "mul")


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D; ``a`` may carry leading batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return make_op(a.data @ b.data, (a, b), backward, "matmul")


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = sigmoid_array(a.data)
    return make_op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return make_op(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].data.ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: np.split(g, bounds, axis=axis), "concat")


def take(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    axis = axis % a.data.ndim
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make_op(a.data[index], (a,), backward, "take")


def reshape(a: Tensor, shape) -> Tensor:
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def sum_all(a: Tensor) -> Tensor:
    return make_op(np.sum(a.data), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def scale(a: Tensor, c: float) -> Tensor:
    return make_op(a.data * c, (a,), lambda g: (g * c,), "scale")
