"""Dense tensors with a minimal reverse-mode differentiation tape.

Everything in this package computes on `Tensor`, a thin wrapper around a
row-major numpy array.  Element type is float32 by default; switch the whole
world to float64 with ``precision("f64")`` when running gradient checks.

Gradients are recorded on an explicit :class:`Tape`.  While a tape is active,
every primitive whose inputs are tracked appends one node; ``backward(loss)``
replays the nodes in strict reverse execution order and accumulates adjoints
into ``Tensor.grad``.  With no tape active the primitives are plain numpy
calls, which is the fast path used for inference and benchmarks.

Tensors are immutable from the caller's perspective: never write to
``Tensor.data`` of a tensor you did not just create.  (Batch-norm running
statistics are the one sanctioned exception, see :mod:`duotrack.nn`.)
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}

_state = threading.local()


def _tls():
    if not hasattr(_state, "dtype"):
        _state.dtype = np.float32
        _state.tapes = []
    return _state


def default_dtype():
    """Current element type for newly created tensors."""
    return _tls().dtype


def set_default_dtype(mode: str) -> None:
    if mode not in _DTYPES:
        raise ValueError(f"unknown dtype mode {mode!r}, expected one of {sorted(_DTYPES)}")
    _tls().dtype = _DTYPES[mode]


@contextmanager
def precision(mode: str):
    """Temporarily switch the default element type ("f32" or "f64").

    All acceptance gradient checks run under ``precision("f64")``.
    """
    st = _tls()
    prev = st.dtype
    set_default_dtype(mode)
    try:
        yield
    finally:
        st.dtype = prev


class Tensor:
    """Dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._tracked = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis, keepdims)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=requires_grad)


def ones(*shape, requires_grad: bool = False) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return Tensor(np.ones(shape, dtype=default_dtype()), requires_grad=requires_grad)


def full(shape, value, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=default_dtype()), requires_grad=requires_grad)


# -- tape ------------------------------------------------------------------


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of executed primitives, replayable in reverse.

    Single-owner: one tape must not be shared across concurrent executions.
    Distinct (tape, tensors) worlds may run concurrently.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tls().tapes.append(self)
        return self

    def __exit__(self, *exc):
        popped = _tls().tapes.pop()
        assert popped is self

    def backward(self, loss: Tensor) -> None:
        """Accumulate adjoints of every recorded primitive into ``.grad``.

        ``loss`` must be a scalar produced on this tape.  Leaves that do not
        reach the loss end up with an exactly-zero gradient.
        """
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        produced = {id(n.out) for n in self.nodes}
        if id(loss) not in produced:
            raise ValueError("loss tensor was not produced on this tape")
        seen: list[Tensor] = []
        seen_ids = set()
        for n in self.nodes:
            for t in (n.out, *n.parents):
                if id(t) not in seen_ids:
                    seen_ids.add(id(t))
                    seen.append(t)
                    t.grad = None
        loss.grad = np.ones_like(loss.data)
        for n in reversed(self.nodes):
            g = n.out.grad
            if g is None:
                continue
            for parent, pg in zip(n.parents, n.vjp(g)):
                if pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg
        for t in seen:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def active_tape() -> Tape | None:
    tapes = _tls().tapes
    return tapes[-1] if tapes else None


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation on the innermost active tape."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() called with no active Tape")
    tape.backward(loss)


def record(out: Tensor, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Register a primitive result on the active tape (if any).

    ``vjp(g)`` must return one gradient array (or None) per parent, already
    reduced to the parent's shape.  Custom kernels use this hook to supply
    hand-derived adjoints.
    """
    tape = active_tape()
    if tape is not None and any(p.requires_grad or p._tracked for p in parents):
        out._tracked = True
        tape.nodes.append(_Node(out, parents, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise primitives --------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return record(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return record(out, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e)
    return record(out, (a,), lambda g: (g * e,))


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_arr(a.data)
    out = Tensor(s)
    return record(out, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t)
    return record(out, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return record(out, (a,), lambda g: (g * mask,))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid_arr(a.data)
    out = Tensor(a.data * s)
    return record(out, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximate GELU; agrees with the exact erf form to ~1e-3 absolute."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return record(out, (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably; strictly positive for all inputs."""
    out = Tensor(np.logaddexp(0.0, a.data))
    s = _sigmoid_arr(a.data)
    return record(out, (a,), lambda g: (g * s,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    out = Tensor(np.abs(a.data))
    return record(out, (a,), lambda g: (g * sign,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    mask = a.data <= b.data
    out = Tensor(np.where(mask, a.data, b.data))

    def vjp(g):
        return _unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)

    return record(out, (a, b), vjp)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    mask = a.data >= b.data
    out = Tensor(np.where(mask, a.data, b.data))

    def vjp(g):
        return _unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)

    return record(out, (a, b), vjp)


# -- linear algebra / shape ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product.  Summation order is fixed by the backend and
    deterministic run-to-run for identical inputs."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return record(out, (a, b), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = Tensor(a.data.transpose(axes) if axes else a.data.T)

    def vjp(g):
        if axes is None:
            return (g.T if a.ndim >= 2 else g,)
        inv = np.argsort(axes)
        return (g.transpose(inv),)

    return record(out, (a,), vjp)


def flip0(a: Tensor) -> Tensor:
    """Reverse along the leading (sequence) axis."""
    out = Tensor(a.data[::-1].copy())
    return record(out, (a,), lambda g: (g[::-1].copy(),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    extents = [t.shape[axis] for t in tensors]
    splits = np.cumsum(extents)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record(out, tuple(tensors), vjp)


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice/integer) indexing; gradients scatter back into zeros."""
    out = Tensor(a.data[idx].copy() if isinstance(idx, (slice, int, tuple)) else a.data[idx])

    def vjp(g):
        full_grad = np.zeros_like(a.data)
        full_grad[idx] = g
        return (full_grad,)

    return record(out, (a,), vjp)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return record(out, (a,), vjp)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape).copy(),)

    return record(out, (a,), vjp)
