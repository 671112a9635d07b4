"""Dense tensors with a single-writer reverse-mode tape.

Every differentiable op records a ``TapeNode`` holding the inputs and a
backward closure over whatever forward values the rule needs.  ``backward``
sweeps the tape in reverse id order, which is a valid topological order
because ids are handed out as nodes are appended.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_PRECISION = {32: np.float32, 64: np.float64}
_dtype = np.float32
_grad_enabled = True


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


def get_dtype():
    return _dtype


def set_precision(bits: int) -> None:
    global _dtype
    if bits not in _PRECISION:
        raise ValueError(f"precision must be 32 or 64 bits, got {bits}")
    _dtype = _PRECISION[bits]


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the global float width (32 for training, 64 for checks)."""
    old = _dtype
    set_precision(bits)
    try:
        yield
    finally:
        globals()["_dtype"] = old


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


def is_grad_enabled() -> bool:
    return _grad_enabled


@dataclass
class TapeNode:
    id: int
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    output: "Tensor"


class Tape:
    def __init__(self):
        self._ids = itertools.count(1)
        self.epoch = 0
        self.nodes: list[TapeNode] = []

    def record(self, op, inputs, backward, output) -> TapeNode:
        node = TapeNode(next(self._ids), op, tuple(inputs), backward, output)
        self.nodes.append(node)
        return node

    def reset(self) -> None:
        self.nodes = []
        self.epoch += 1


_tape = Tape()


def reset_tape() -> None:
    """Drop every recorded node; tensors from the old epoch can no longer backprop."""
    _tape.reset()


class Tensor:
    """Value-semantic array wrapper.  ``data`` is a numpy array in the global dtype."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _dtype, copy=True)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: TapeNode | None = None
        self._epoch = _tape.epoch

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self):
        return backward(self)

    # operator sugar; all routed through the recorded ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def make_op(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap a forward result, check finiteness, and record it if any input needs grad."""
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    result._node = None
    result._epoch = _tape.epoch
    result.requires_grad = _grad_enabled and any(t.requires_grad for t in inputs)
    if result.requires_grad:
        result._node = _tape.record(op, inputs, backward_fn, result)
    return result


def backward(out: Tensor) -> dict:
    """Reverse sweep from a one-element tensor.

    Leaf gradients accumulate (``+=``) into ``.grad``; the returned dict maps
    every leaf that received a contribution to its gradient array.  The tape
    is consumed: a second call without a fresh forward pass is an error.
    """
    if out.size != 1:
        raise TapeError(f"backward needs a scalar output, got shape {out.shape}")
    if out._node is None:
        raise TapeError("output was not produced by recorded ops (or grad was disabled)")
    if out._epoch != _tape.epoch:
        raise TapeError("tape already consumed; re-run the forward pass before calling backward again")

    grads: dict[int, np.ndarray] = {out._node.id: np.ones_like(out.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(_tape.nodes):
        if node.id > out._node.id:
            continue
        g = grads.pop(node.id, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is not None:
                if inp._node.id in grads:
                    grads[inp._node.id] = grads[inp._node.id] + gi
                else:
                    grads[inp._node.id] = gi
            else:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi.astype(inp.data.dtype, copy=False)
                leaves[id(inp)] = inp
    _tape.reset()
    return {t: t.grad for t in leaves.values()}


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return make_op("add", a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return make_op("sub", a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return make_op("mul", a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def bwd(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * out / b.data, b.shape))

    return make_op("div", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return make_op("neg", -a.data, (a,), lambda g: (-g,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, evaluated on the branch that cannot overflow."""
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return make_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) as max(x, 0) + log1p(exp(-|x|))."""
    d = x.data
    out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))

    def bwd(g):
        e = np.exp(-np.abs(d))
        s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * s,)

    return make_op("softplus", out, (x,), bwd)


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    from scipy.special import erf

    d = x.data
    cdf = 0.5 * (1.0 + erf(d / _SQRT2))
    out = (d * cdf).astype(d.dtype)

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * d * d)
        return (g * (cdf + d * pdf),)

    return make_op("gelu", out, (x,), bwd)


# ----------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_op("sum", np.asarray(out), (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ------------------------------------------------------------------ structure

def reshape(x: Tensor, shape) -> Tensor:
    return make_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_op("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inv),))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 1; backward slices the gradient back apart."""
    if not parts:
        raise ValueError("concat_channels needs at least one part")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or p.shape[0] != ref[0] or p.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels: part shape {p.shape} does not match {ref} "
                             "outside the channel axis")
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def bwd(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return make_op("concat", np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return make_op("slice", x.data[:, start:stop].copy(), (x,), bwd)


def flip(x: Tensor, axis: int) -> Tensor:
    return make_op("flip", np.flip(x.data, axis).copy(), (x,), lambda g: (np.flip(g, axis).copy(),))
