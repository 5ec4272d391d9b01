"""Dense matrix arithmetic with tape-based reverse-mode gradients.

A ``Matrix`` wraps an immutable numpy array whose trailing two axes are its
rows and columns; leading axes, when present, stack several matrices of the
same shape so that a batch of segments moves through one call. A
``Parameter`` is a mutable leaf with a ``grad`` buffer of the same shape.

Operations record themselves on the active ``Tape`` (if any input needs a
gradient); ``Tape.backward`` walks the records in exact reverse order. Without
an active tape the operations are plain, side-effect-free forward passes and
may be called from several threads.
"""
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

from errors import ContractError, ShapeError

_DTYPE = np.float32
_local = threading.local()

MASK_FILL = -1e9


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    _DTYPE = np.dtype(dtype).type


@contextmanager
def float64():
    """Switch newly created matrices and parameters to 64-bit floats."""
    previous = _DTYPE
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Matrix:
    __slots__ = ("value", "requires_grad")

    def __init__(self, value, dtype=None):
        array = np.array(value, dtype=_DTYPE if dtype is None else dtype)
        if array.ndim < 2:
            array = array.reshape((1,) * (2 - array.ndim) + array.shape)
        array.flags.writeable = False
        self.value = array
        self.requires_grad = False

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Matrix":
        out = cls.__new__(cls)
        array.flags.writeable = False
        out.value = array
        out.requires_grad = False
        return out

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[-2] if self.value.ndim >= 2 else 1

    @property
    def cols(self) -> int:
        return self.value.shape[-1] if self.value.ndim >= 1 else 1

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return np.array(self.value)

    def __repr__(self) -> str:
        return f"Matrix(shape={self.shape}, dtype={self.value.dtype})"


class Parameter(Matrix):
    __slots__ = ("grad", "name")

    def __init__(self, value, name: str, dtype=None):
        array = np.array(value, dtype=_DTYPE if dtype is None else dtype)
        self.value = array
        self.grad = np.zeros_like(array)
        self.name = name
        self.requires_grad = True

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def assign(self, array: np.ndarray) -> None:
        if array.shape != self.value.shape:
            raise ShapeError(f"assign {self.name}", self.value.shape, array.shape)
        self.value[...] = array

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# --- Tape ---

@dataclass
class _Record:
    output: Matrix
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class Tape:
    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def backward(self, loss: Matrix) -> None:
        """Accumulate d(loss)/d(param) into every reachable Parameter.grad."""
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not any(r.output is loss for r in self.records):
            raise ContractError("backward: loss was not produced on this tape")

        pending = {id(loss): np.ones_like(loss.value)}
        for record in reversed(self.records):
            grad = pending.pop(id(record.output), None)
            if grad is None:
                continue
            for inp, g in zip(record.inputs, record.backward(grad)):
                if g is None or not inp.requires_grad:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad += g.astype(inp.grad.dtype, copy=False)
                elif id(inp) in pending:
                    pending[id(inp)] = pending[id(inp)] + g
                else:
                    pending[id(inp)] = g


def current_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _emit(array: np.ndarray, inputs: tuple, backward) -> Matrix:
    out = Matrix._wrap(array)
    tape = current_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.records.append(_Record(out, inputs, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(array: np.ndarray) -> np.ndarray:
    return np.swapaxes(array, -1, -2)


def constant(value, dtype=None) -> Matrix:
    return Matrix(value, dtype=dtype)


# --- Linear algebra ---

def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        return (_unbroadcast(np.matmul(g, _swap(b.value)), a.shape),
                _unbroadcast(np.matmul(_swap(a.value), g), b.shape))

    return _emit(out, (a, b), backward)


def transpose(a: Matrix) -> Matrix:
    return _emit(_swap(a.value).copy(), (a,), lambda g: (_swap(g),))


def reshape(a: Matrix, shape: tuple) -> Matrix:
    return _emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Matrix, axes: tuple) -> Matrix:
    inverse = tuple(np.argsort(axes))
    return _emit(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),))


def _broadcast_check(op: str, a: Matrix, b: Matrix) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a: Matrix, b: Matrix) -> Matrix:
    _broadcast_check("add", a, b)
    return _emit(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Matrix, b: Matrix) -> Matrix:
    _broadcast_check("sub", a, b)
    return _emit(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Matrix, b: Matrix) -> Matrix:
    _broadcast_check("mul", a, b)
    return _emit(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a: Matrix, factor: float) -> Matrix:
    return _emit(a.value * a.value.dtype.type(factor), (a,), lambda g: (g * factor,))


def add_bias(x: Matrix, bias: Matrix) -> Matrix:
    """Add a bias laid out either along the columns (1×cols) or the rows (rows×1)."""
    if bias.shape not in ((1, x.cols), (x.rows, 1)):
        raise ShapeError("add_bias", x.shape, bias.shape)
    return add(x, bias)


# --- Elementwise ---

def tanh_elem(x: Matrix) -> Matrix:
    y = np.tanh(x.value)
    return _emit(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid_elem(x: Matrix) -> Matrix:
    y = expit(x.value)
    return _emit(y, (x,), lambda g: (g * y * (1 - y),))


_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu_elem(x: Matrix) -> Matrix:
    v = x.value
    cdf = 0.5 * (1.0 + erf(v * _SQRT_HALF))
    y = (v * cdf).astype(v.dtype, copy=False)

    def backward(g):
        pdf = np.exp(-0.5 * v * v) * _INV_SQRT_2PI
        return ((g * (cdf + v * pdf)).astype(v.dtype, copy=False),)

    return _emit(y, (x,), backward)


def dropout(x: Matrix, rate: float, rng: np.random.Generator | None) -> Matrix:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.value.dtype) / x.value.dtype.type(1.0 - rate)
    return _emit(x.value * keep, (x,), lambda g: (g * keep,))


# --- Row-wise ---

def softmax_rows(x: Matrix) -> Matrix:
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), backward)


def layer_norm(x: Matrix, gain: Parameter, bias: Parameter, eps: float = 1e-5) -> Matrix:
    """Normalize each row over its features (the last axis).

    Zero-variance rows normalize to zeros before gain and bias.
    """
    n = x.cols
    if gain.shape[-1] != n or bias.shape[-1] != n:
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mean = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mean
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    y = xhat * gain.value + bias.value

    def backward(g):
        dxhat = g * gain.value
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return (dx.astype(x.value.dtype, copy=False),
                _unbroadcast(g * xhat, gain.shape),
                _unbroadcast(g, bias.shape))

    return _emit(y.astype(x.value.dtype, copy=False), (x, gain, bias), backward)


def row_sum(x: Matrix) -> Matrix:
    """Sum each row; the result is a column (rows×1)."""
    return _emit(x.value.sum(axis=-1, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),))


# --- Gathers and reductions ---

def embedding_lookup(table: Matrix, ids) -> Matrix:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.rows):
        raise IndexError(f"embedding_lookup: id {int(ids.max())} outside vocabulary of {table.rows}")
    out = table.value[ids]

    def backward(g):
        grad = np.zeros_like(table.value)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.cols))
        return (grad,)

    return _emit(out, (table,), backward)


def take_rows(x: Matrix, index) -> Matrix:
    """Gather rows of a 2-D matrix in the given order."""
    index = np.asarray(index, dtype=np.int64)
    if x.value.ndim != 2:
        raise ShapeError("take_rows", x.shape)

    def backward(g):
        grad = np.zeros_like(x.value)
        np.add.at(grad, index, g)
        return (grad,)

    return _emit(x.value[index], (x,), backward)


def concat_rows(parts: Sequence[Matrix]) -> Matrix:
    if len({p.cols for p in parts}) != 1:
        raise ShapeError("concat_rows", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([p.value for p in parts], axis=0), tuple(parts), backward)


def mean_rows(x: Matrix) -> Matrix:
    """Average the rows of a 2-D matrix into a single 1×cols row."""
    n = x.rows
    return _emit(x.value.mean(axis=0, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def max_rows(x: Matrix) -> Matrix:
    """Column-wise maximum over the rows; the gradient goes to the first maximal row."""
    winner = x.value.argmax(axis=0)
    cols = np.arange(x.cols)

    def backward(g):
        grad = np.zeros_like(x.value)
        grad[winner, cols] = g.reshape(-1)
        return (grad,)

    return _emit(x.value[winner, cols].reshape(1, -1), (x,), backward)


def sum_all(x: Matrix) -> Matrix:
    return _emit(x.value.sum().reshape(1, 1), (x,),
                 lambda g: (np.broadcast_to(g.reshape(()), x.shape).copy(),))


def mean_all(x: Matrix) -> Matrix:
    n = x.value.size
    return _emit(x.value.mean().reshape(1, 1), (x,),
                 lambda g: (np.broadcast_to(g.reshape(()) / n, x.shape).copy(),))


# --- Losses ---

def cross_entropy_rows(logits: Matrix, targets) -> Matrix:
    """Mean negative log-likelihood of integer targets under row-wise softmax."""
    targets = np.asarray(targets, dtype=np.int64)
    flat = logits.value.reshape(-1, logits.cols)
    if flat.shape[0] != targets.size:
        raise ShapeError("cross_entropy_rows", logits.shape, targets.shape)
    shifted = flat - flat.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(targets.size)
    loss = -log_probs[rows, targets].mean()

    def backward(g):
        probs = np.exp(log_probs)
        probs[rows, targets] -= 1
        return ((probs * (g.reshape(()) / targets.size)).reshape(logits.shape),)

    return _emit(np.asarray(loss, dtype=flat.dtype).reshape(1, 1), (logits,), backward)


PROB_CLAMP = 1e-7


def binary_cross_entropy(p: Matrix, y) -> Matrix:
    """Mean BCE over every cell of ``p`` against 0/1 targets ``y``.

    Probabilities are clamped to [1e-7, 1-1e-7]; clamped cells pass the
    gradient of the clamped expression straight through.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size != p.value.size:
        raise ShapeError("binary_cross_entropy", p.shape, y.shape)
    y = y.reshape(p.shape)
    pc = np.clip(p.value.astype(np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    cells = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    n = cells.size

    def backward(g):
        grad = (pc - y) / (pc * (1 - pc)) * (g.reshape(()) / n)
        return (grad.astype(p.value.dtype),)

    return _emit(np.asarray(cells.mean(), dtype=p.value.dtype).reshape(1, 1), (p,), backward)
