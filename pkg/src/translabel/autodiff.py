"""Reverse-mode automatic differentiation over numpy arrays.

The op set is sized to what a recurrent attention model actually needs:
elementwise arithmetic, matmul, concat / stack / narrow / take for
sequence plumbing, tanh / sigmoid / softmax, and an LSTM cell built on
top. Each op records a backward closure; ``Tensor.backward()`` replays
the closures exactly once each, in reverse topological order, so two
replays of the same graph produce bit-identical gradients.

Values are checked for NaN/Inf after every forward op and after each
backward closure, and a non-finite value raises ``NonFiniteError``
naming the offending primitive.

Graphs are built per forward pass and must not be reused after the
leaf ``data`` arrays have been mutated (e.g. by an optimizer step);
some ops keep views of their inputs rather than copies.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np

# Added to a probability mass before log() so an exact zero stays finite.
EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""

    def __init__(self, op: str, where: str = "forward"):
        super().__init__(f"non-finite values in {where} pass of '{op}'")
        self.op = op
        self.where = where


# Per-thread so decoding in worker threads cannot switch recording off
# under a training loop running elsewhere in the process.
_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Skip graph recording inside the block (decoding, numeric probes)."""
    prev = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


def _finite(arr: np.ndarray, op: str, where: str = "forward") -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op, where)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
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
    """A numpy array plus the closure that backpropagates through it."""

    __slots__ = ("data", "grad", "op", "_parents", "_bw")

    def __init__(self, data, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._bw = None
        _finite(self.data, "leaf")

    @classmethod
    def _node(cls, data, parents, op, bw):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        _finite(data, op)
        if is_grad_enabled():
            out._parents = parents
            out._bw = bw(out)
        else:
            out._parents = ()
            out._bw = None
        return out

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, dtype={self.data.dtype})"

    # -- backward ------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.shape != ():
            raise ShapeError(
                f"backward() starts from a scalar, got shape {self.data.shape}"
            )
        order: list[Tensor] = []
        visited = {id(self)}
        stack: list[tuple[Tensor, object]] = [(self, iter(self._parents))]
        while stack:
            node, it = stack[-1]
            child = next(it, None)
            if child is None:
                order.append(node)
                stack.pop()
            elif id(child) not in visited:
                visited.add(id(child))
                stack.append((child, iter(child._parents)))
        for t in order:
            t.grad = np.zeros_like(t.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bw is not None:
                node._bw()
                for p in node._parents:
                    _finite(p.grad, node.op, "backward")

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.data.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.data.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# -- elementwise -------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None) or np.float64)
    b = _wrap(b, a.data.dtype)
    data = a.data + b.data

    def bw(out):
        def run():
            a.grad += _unbroadcast(out.grad, a.data.shape)
            b.grad += _unbroadcast(out.grad, b.data.shape)

        return run

    return Tensor._node(data, (a, b), "add", bw)


def mul(a: Tensor, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None) or np.float64)
    b = _wrap(b, a.data.dtype)
    data = a.data * b.data

    def bw(out):
        def run():
            a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
            b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

        return run

    return Tensor._node(data, (a, b), "mul", bw)


def neg(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            a.grad -= out.grad

        return run

    return Tensor._node(-a.data, (a,), "neg", bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(out):
        def run():
            a.grad += (1.0 - out.data * out.data) * out.grad

        return run

    return Tensor._node(data, (a,), "tanh", bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # np.where evaluates both branches, so the one picked for stability on
    # the other side overflows harmlessly; silence just that arithmetic
    with np.errstate(over="ignore", invalid="ignore"):
        data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
    data = data.astype(x.dtype, copy=False)

    def bw(out):
        def run():
            a.grad += out.data * (1.0 - out.data) * out.grad

        return run

    return Tensor._node(data, (a,), "sigmoid", bw)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bw(out):
        def run():
            a.grad += out.data * out.grad

        return run

    return Tensor._node(data, (a,), "exp", bw)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def bw(out):
        def run():
            a.grad += out.grad / a.data

        return run

    return Tensor._node(data, (a,), "log", bw)


def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum()

    def bw(out):
        def run():
            a.grad += out.grad

        return run

    return Tensor._node(data, (a,), "sum", bw)


# -- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects Tensor operands")
    an, bn = a.data.ndim, b.data.ndim
    if an not in (1, 2) or bn not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(out):
        def run():
            g = out.grad
            if an == 2 and bn == 2:
                a.grad += g @ b.data.T
                b.grad += a.data.T @ g
            elif an == 2 and bn == 1:
                a.grad += np.outer(g, b.data)
                b.grad += a.data.T @ g
            elif an == 1 and bn == 2:
                a.grad += b.data @ g
                b.grad += np.outer(a.data, g)
            else:
                a.grad += g * b.data
                b.grad += g * a.data

        return run

    return Tensor._node(data, (a, b), "matmul", bw)


# -- sequence plumbing -------------------------------------------------


def concat(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat expects 1-D parts, got shape {p.shape}")
    data = np.concatenate([p.data for p in parts])
    sizes = [p.data.shape[0] for p in parts]

    def bw(out):
        def run():
            off = 0
            for p, n in zip(parts, sizes):
                p.grad += out.grad[off : off + n]
                off += n

        return run

    return Tensor._node(data, tuple(parts), "concat", bw)


def stack(rows: list[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a 2-D tensor, one per row."""
    if not rows:
        raise ShapeError("stack of zero tensors")
    data = np.stack([r.data for r in rows])

    def bw(out):
        def run():
            for i, r in enumerate(rows):
                r.grad += out.grad[i]

        return run

    return Tensor._node(data, tuple(rows), "stack", bw)


def narrow(a: Tensor, start: int, length: int) -> Tensor:
    """Contiguous 1-D slice [start, start+length)."""
    if a.data.ndim != 1:
        raise ShapeError(f"narrow expects a 1-D tensor, got shape {a.shape}")
    if start < 0 or length < 0 or start + length > a.data.shape[0]:
        raise ShapeError(
            f"narrow range [{start}, {start + length}) outside length {a.data.shape[0]}"
        )
    data = a.data[start : start + length]

    def bw(out):
        def run():
            a.grad[start : start + length] += out.grad

        return run

    return Tensor._node(data, (a,), "narrow", bw)


def take(a: Tensor, indices) -> Tensor:
    """Gather entries of a 1-D tensor; repeated indices accumulate on backward."""
    if a.data.ndim != 1:
        raise ShapeError(f"take expects a 1-D tensor, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(f"take index out of range for length {a.data.shape[0]}")
    data = a.data[idx]

    def bw(out):
        def run():
            np.add.at(a.grad, idx, out.grad)

        return run

    return Tensor._node(data, (a,), "take", bw)


def take_row(a: Tensor, row: int) -> Tensor:
    """Select one row of a 2-D tensor (embedding lookup)."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_row expects a 2-D tensor, got shape {a.shape}")
    if not 0 <= row < a.data.shape[0]:
        raise IndexError(f"row {row} out of range for {a.data.shape[0]} rows")
    data = a.data[row]

    def bw(out):
        def run():
            a.grad[row] += out.grad

        return run

    return Tensor._node(data, (a,), "take_row", bw)


# -- softmax and loss --------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Numerically stable softmax over a 1-D tensor."""
    if a.data.ndim != 1 or a.data.shape[0] == 0:
        raise ShapeError(f"softmax expects a non-empty 1-D tensor, got shape {a.shape}")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    data = e / e.sum()

    def bw(out):
        def run():
            s = out.data
            g = out.grad
            a.grad += s * (g - np.dot(g, s))

        return run

    return Tensor._node(data, (a,), "softmax", bw)


def nll(mass: Tensor) -> Tensor:
    """Negative log of a probability mass, guarded against exact zero."""
    return neg(log(add(mass, _wrap(EPS, mass.data.dtype)))).sum()


def cross_entropy(probs: Tensor, target_index: int) -> Tensor:
    """-log p[target] over an already-normalized distribution."""
    if probs.data.ndim != 1:
        raise ShapeError(f"cross_entropy expects a 1-D distribution, got {probs.shape}")
    n = probs.data.shape[0]
    if not 0 <= target_index < n:
        raise IndexError(f"target_index {target_index} out of range for {n} classes")
    total = float(probs.data.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"cross_entropy input sums to {total!r}, not a distribution")
    return nll(take(probs, [target_index]))


# -- LSTM cell ---------------------------------------------------------


class LstmWeights:
    """One LSTM cell: input/recurrent matrices and bias, gate order i,f,g,o."""

    def __init__(self, w_in: Tensor, w_rec: Tensor, bias: Tensor):
        self.w_in = w_in
        self.w_rec = w_rec
        self.bias = bias
        self.d = w_rec.data.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_in": self.w_in, "w_rec": self.w_rec, "bias": self.bias}


def init_lstm(rng, d_in: int, d: int, dtype, forget_bias: float = 1.0) -> LstmWeights:
    w_in = Tensor(uniform_init(rng, (4 * d, d_in), d_in, dtype))
    w_rec = Tensor(uniform_init(rng, (4 * d, d), d, dtype))
    b = np.zeros(4 * d, dtype=dtype)
    b[d : 2 * d] = forget_bias
    return LstmWeights(w_in, w_rec, Tensor(b))


def lstm_step(x: Tensor, state: tuple[Tensor, Tensor], w: LstmWeights) -> tuple[Tensor, Tensor]:
    """One LSTM step. Returns (h, c) for the next position."""
    h0, c0 = state
    d = w.d
    z = add(add(matmul(w.w_in, x), matmul(w.w_rec, h0)), w.bias)
    i = sigmoid(narrow(z, 0, d))
    f = sigmoid(narrow(z, d, d))
    g = tanh(narrow(z, 2 * d, d))
    o = sigmoid(narrow(z, 3 * d, d))
    c = add(mul(f, c0), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def zeros(n: int, dtype) -> Tensor:
    return Tensor(np.zeros(n, dtype=dtype))


def uniform_init(rng, shape, fan_in: int, dtype) -> np.ndarray:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
