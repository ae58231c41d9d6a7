"""Reverse-mode automatic differentiation on a dynamic tape.

Operations executed while a :class:`Tape` is active are recorded in
execution order; :func:`backward` walks that list in reverse and applies each
operation's adjoint rule. Outside a tape, operations just compute values,
which is how inference runs.

Arrays are plain numpy. Precision follows the inputs: tests feed float64,
training feeds float32 (see :func:`precision`).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import MissingGradientError, ShapeError, TapeError

_tapes: list["Tape"] = []
_default_dtype = np.float64


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for tensors built from Python data."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = prev


class Tensor:
    """An n-d array with an optional gradient slot.

    Leaves with ``requires_grad=True`` are parameters: :func:`backward`
    accumulates into their ``grad``. Recorded intermediates keep their
    gradient on the tape only.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "adjoint", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_default_dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.adjoint = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self.adjoint is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __len__(self):
        return self.data.shape[0]

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and not isinstance(x, np.ndarray):
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; nested tapes record only into the innermost.
    A tape can be differentiated once.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss):
        return backward(self, loss)


def _record(data, parents: Sequence[Tensor], adjoint: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _tapes and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.adjoint = adjoint
        out.op = op
        _tapes[-1].nodes.append(out)
    else:
        out.op = op
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate dloss/dparam into ``grad`` of every leaf reachable from ``loss``.

    Leaves must enter with ``grad is None`` (see :func:`zero_grad`); finding
    an old gradient is treated as a bug, not summed.
    """
    if tape.consumed:
        raise TapeError("tape already differentiated; run the forward pass again")
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss.adjoint is None:
        raise TapeError("loss was not recorded on a tape or depends on no parameters")
    tape.consumed = True
    grads = {id(loss): np.ones_like(loss.data)}
    seen_leaves = set()
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        pgrads = node.adjoint(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if p.adjoint is None:
                if id(p) in seen_leaves:
                    p.grad += pg
                else:
                    if p.grad is not None:
                        raise TapeError(
                            f"parameter {p.name or p.shape} already holds a gradient; "
                            "call zero_grad before the next step"
                        )
                    p.grad = np.array(pg, dtype=p.data.dtype, copy=True)
                    seen_leaves.add(id(p))
            else:
                k = id(p)
                grads[k] = grads[k] + pg if k in grads else pg
    tape.nodes = []


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# primitive operations


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                   "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _record(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form is overflow-free and exact at 0
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0).astype(a.dtype), (a,),
                   lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _record(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record(np.log(x), (a,), lambda g: (g / x,), "log")


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip values; the gradient passes only where the input was inside the range."""
    a = as_tensor(a)
    x = a.data
    mask = np.ones(x.shape, dtype=bool)
    if lo is not None:
        mask &= x >= lo
    if hi is not None:
        mask &= x <= hi
    return _record(np.clip(x, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def adjoint(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (a,), adjoint, "softmax")


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def adjoint(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record(np.asarray(a.data.sum(axis=axis)), (a,), adjoint, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


def concat(tensors: Sequence, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def adjoint(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(y, ts, adjoint, "concat")


def getitem(a, idx) -> Tensor:
    """Basic (slice/int) indexing; the adjoint scatters into zeros."""
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def adjoint(g):
        out = np.zeros(shape, dtype=dtype)
        out[idx] = g
        return (out,)

    try:
        y = a.data[idx]
    except IndexError as exc:
        raise ShapeError(f"getitem: {exc} for shape {shape}") from None
    return _record(np.asarray(y), (a,), adjoint, "getitem")


def pick(a, index) -> Tensor:
    """Select ``a[t, index[t]]`` for every row t of a 2-d tensor."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if a.data.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"pick: index shape {index.shape} does not match rows of {a.shape}")
    rows = np.arange(a.shape[0])
    shape, dtype = a.shape, a.dtype

    def adjoint(g):
        out = np.zeros(shape, dtype=dtype)
        out[rows, index] = g
        return (out,)

    return _record(a.data[rows, index], (a,), adjoint, "pick")


def grad_scale(a, c: float) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``c``."""
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _record(a.data, (a,), lambda g: (g * c,), "grad_scale")


def grl(a, lam: float) -> Tensor:
    """Gradient reversal: identity forward, gradient times ``-lam`` backward."""
    if lam < 0:
        raise ValueError(f"gradient reversal coefficient must be >= 0, got {lam}")
    out = grad_scale(a, -lam)
    out.op = "grl"
    return out


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    lr: float
    momentum: float
    buffers: dict = field(default_factory=dict)
    step: int = 0


class SGDMomentum:
    """Classical momentum: ``v <- m*v + g``, ``theta <- theta - lr*v``."""

    def __init__(self, params: Mapping[str, Tensor], lr: float, momentum: float = 0.0,
                 state: OptimizerState | None = None):
        self.params = dict(params)
        if state is None:
            state = OptimizerState(lr=lr, momentum=momentum)
        for name, p in self.params.items():
            state.buffers.setdefault(name, np.zeros_like(p.data))
        self.state = state

    def zero_grad(self):
        zero_grad(self.params.values())

    def step(self):
        st = self.state
        for name, p in self.params.items():
            if p.grad is None:
                raise MissingGradientError(f"no gradient for parameter {name!r}")
        for name, p in self.params.items():
            v = st.buffers[name]
            v = (st.momentum * v + p.grad) if st.momentum else p.grad.copy()
            v = v.astype(p.data.dtype, copy=False)
            st.buffers[name] = v
            p.data = (p.data - p.data.dtype.type(st.lr) * v).astype(p.data.dtype, copy=False)
        st.step += 1


def sgd_momentum_step(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    SGDMomentum(params, state.lr, state.momentum, state=state).step()
