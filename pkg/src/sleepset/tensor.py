"""Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a numpy array plus an optional gradient slot. Operations
record a closure that routes the output gradient back to the operands; a
call to `backward()` on a scalar runs those closures in reverse topological
order. float32 is the working precision; float64 exists for gradient
checking and must not be mixed with float32 in one graph.

Tensors are immutable after construction apart from gradient accumulation.
A graph belongs to a single thread; independent graphs may run in parallel.
"""

import contextlib
import threading

import numpy as np
from scipy.special import erf as _erf

from .errors import ShapeError

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction, e.g. for inference over long recordings."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _coerce(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype in _FLOAT_DTYPES:
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=DEFAULT_DTYPE)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _coerce(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    # ---- introspection -------------------------------------------------
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

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # ---- graph ----------------------------------------------------------
    def detach(self):
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
        return out

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g, own=False):
        """Add `g` into the grad slot. `own=True` promises the caller
        allocated `g` exclusively for this tensor, letting us adopt it
        without the defensive copy."""
        if self.grad is None:
            if own and g.dtype == self.data.dtype:
                self.grad = g
            else:
                self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Populate `.grad` on every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # ---- arithmetic -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else _axis_size(self.shape, axis)
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def _axis_size(shape, axis):
    if isinstance(axis, int):
        return shape[axis]
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def _const_like(value, ref):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.dtype))


def _check_dtypes(a, b):
    if a.dtype != b.dtype:
        raise TypeError(
            f"mixed dtypes in one graph: {a.dtype.name} vs {b.dtype.name}")


def _make(data, parents, backward_fn):
    """Build an op result; skips graph bookkeeping under no_grad."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward_fn = None
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- primitives ----------------------------------------------------------

def add(a, b):
    b = _const_like(b, a)
    _check_dtypes(a, b)
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bw)


def sub(a, b):
    b = _const_like(b, a)
    _check_dtypes(a, b)
    data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), bw)


def mul(a, b):
    b = _const_like(b, a)
    _check_dtypes(a, b)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), own=True)

    return _make(data, (a, b), bw)


def div(a, b):
    b = _const_like(b, a)
    _check_dtypes(a, b)
    data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data),
                                       b.shape), own=True)

    return _make(data, (a, b), bw)


def matmul(a, b):
    _check_dtypes(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape),
                          own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape),
                          own=True)

    return _make(data, (a, b), bw)


def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)

    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), bw)


def transpose(a, *axes):
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))

    def bw(g):
        a._accumulate(g.transpose(inverse))

    return _make(data, (a,), bw)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.dtype)

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(data, (a,), bw)


def exp(a):
    data = np.exp(a.data)

    def bw(g):
        a._accumulate(g * data, own=True)

    return _make(data, (a,), bw)


def log(a):
    data = np.log(a.data)

    def bw(g):
        a._accumulate(g / a.data)

    return _make(data, (a,), bw)


def sqrt(a):
    data = np.sqrt(a.data)

    def bw(g):
        a._accumulate(g * (0.5 / data))

    return _make(data, (a,), bw)


def power(a, exponent):
    if isinstance(exponent, Tensor):
        raise TypeError("power supports scalar exponents only")
    data = a.data ** exponent

    def bw(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1))

    return _make(data, (a,), bw)


def erf(a):
    data = _erf(a.data).astype(a.dtype, copy=False)
    two_over_sqrt_pi = np.asarray(2.0 / np.sqrt(np.pi), dtype=a.dtype)

    def bw(g):
        a._accumulate(g * two_over_sqrt_pi * np.exp(-a.data * a.data))

    return _make(data, (a,), bw)


def take(a, key):
    """Basic (slice/integer) indexing; gradient scatters back to the source."""
    data = a.data[key]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.dtype)

    def bw(g):
        gx = np.zeros_like(a.data)
        gx[key] = g
        a._accumulate(gx, own=True)

    return _make(data, (a,), bw)


def stack(tensors, axis=0):
    first = tensors[0]
    for t in tensors[1:]:
        _check_dtypes(first, t)
    data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(part)

    return _make(data, tuple(tensors), bw)


def concat(tensors, axis=0):
    first = tensors[0]
    for t in tensors[1:]:
        _check_dtypes(first, t)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bw(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                t._accumulate(g[tuple(sl)])
            offset += size

    return _make(data, tuple(tensors), bw)
