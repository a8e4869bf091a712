"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while gradient recording is enabled
gets a monotonically increasing sequence number.  ``backward`` collects the
operations reachable from a scalar root and replays their gradient rules in
reverse sequence order, so accumulation order is fixed and runs are
reproducible.

Storage is float32 unless a float64 array is passed in; reductions accumulate
in float64 before casting back.  Binary operations accept equal shapes or a
single-element operand; any other alignment is done explicitly with
``broadcast_to``.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_FLOATS = (np.float32, np.float64)
_state = threading.local()
_counter = itertools.count()


class ShapeError(ValueError):
    """Operands have shapes the operation cannot align."""

    def __init__(self, op: str, a, b):
        self.op = op
        self.shapes = (tuple(a), tuple(b))
        super().__init__(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


class DomainError(ValueError):
    """Input lies outside the domain of the function."""


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable recording inside the block (inference, evaluation)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """N-dimensional float array that can take part in differentiation."""

    __array_priority__ = 100
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float32)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError("tensor", arr.shape, ())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward = None
        self._seq = next(_counter)

    # -- basic properties -------------------------------------------------
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
        if self.data.size != 1:
            raise ValueError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ----------------------------------------------------------
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

    def __pow__(self, other):
        return pow(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, dtype=np.float32, name: str | None = None) -> Tensor:
    """Build a tensor, float32 by default."""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_counter)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# -- backward ---------------------------------------------------------------

def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable tensor.

    Calling twice without clearing gradients adds the second result to the
    first.
    """
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("root does not depend on any tensor that requires grad")
    seen = {id(root): root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen[id(p)] = p
                stack.append(p)
    order = sorted(seen.values(), key=lambda t: t._seq, reverse=True)
    pending = {id(root): np.ones_like(root.data)}
    for node in order:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=p.dtype)
            if pg.shape != p.shape:
                raise ShapeError("backward", pg.shape, p.shape)
            key = id(p)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- elementwise ------------------------------------------------------------

def _align(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(op, a.shape, b.shape)


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.sum(g, dtype=np.float64).astype(t.dtype).reshape(t.shape)


def _binary(op: str, a, b, fwd, rule) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _align(op, a, b)
    out_shape = a.shape if a.size >= b.size else b.shape
    data = fwd(a.data, b.data)
    if data.shape != out_shape:
        data = data.reshape(out_shape)

    def back(g):
        ga, gb = rule(g, a.data, b.data, data)
        return (
            _unbroadcast(np.broadcast_to(ga, out_shape), a) if ga is not None and a.requires_grad else None,
            _unbroadcast(np.broadcast_to(gb, out_shape), b) if gb is not None and b.requires_grad else None,
        )

    return _result(data, (a, b), back)


def _flat_scalar(x: np.ndarray, shape: tuple) -> np.ndarray:
    # single-element operands are combined as scalars, never by numpy broadcasting
    return x.reshape(()) if x.size == 1 and x.shape != shape else x


def _scalarize(fn):
    def wrapped(x, y):
        shape = x.shape if x.size >= y.size else y.shape
        return fn(_flat_scalar(x, shape), _flat_scalar(y, shape))
    return wrapped


def add(a, b) -> Tensor:
    return _binary("add", a, b, _scalarize(np.add), lambda g, x, y, o: (g, g))


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, _scalarize(np.subtract), lambda g, x, y, o: (g, -g))


def mul(a, b) -> Tensor:
    return _binary(
        "mul", a, b, _scalarize(np.multiply),
        lambda g, x, y, o: (g * _flat_scalar(y, o.shape), g * _flat_scalar(x, o.shape)),
    )


def div(a, b) -> Tensor:
    def rule(g, x, y, o):
        y = _flat_scalar(y, o.shape)
        return g / y, -g * o / y
    return _binary("div", a, b, _scalarize(np.divide), rule)


def pow(a, b) -> Tensor:
    """``a ** b``; a tensor exponent needs a strictly positive base."""
    exponent_grad = isinstance(b, Tensor) and b.requires_grad
    if exponent_grad and np.any(np.asarray(a.data if isinstance(a, Tensor) else a) <= 0):
        raise DomainError("pow with a differentiable exponent needs a positive base")

    def rule(g, x, y, o):
        xs, ys = _flat_scalar(x, o.shape), _flat_scalar(y, o.shape)
        ga = g * ys * np.power(xs, ys - 1)
        gb = g * o * np.log(xs) if exponent_grad else None
        return ga, gb
    return _binary("pow", a, b, _scalarize(np.power), rule)


def _unary(x: Tensor, data: np.ndarray, rule) -> Tensor:
    return _result(data, (x,), lambda g: (rule(g),))


def neg(x: Tensor) -> Tensor:
    return _unary(x, -x.data, lambda g: -g)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _unary(x, out, lambda g: g * out)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log requires values > 0")
    return _unary(x, np.log(x.data), lambda g: g / x.data)


def log1p(x: Tensor) -> Tensor:
    if np.any(x.data <= -1):
        raise DomainError("log1p requires values > -1")
    return _unary(x, np.log1p(x.data), lambda g: g / (1 + x.data))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise DomainError("sqrt requires values >= 0")
    out = np.sqrt(x.data)
    return _unary(x, out, lambda g: g * 0.5 / out)


def abs(x: Tensor) -> Tensor:
    # subgradient at 0 is 0
    return _unary(x, np.abs(x.data), lambda g: g * np.sign(x.data))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _unary(x, np.where(mask, x.data, 0).astype(x.dtype), lambda g: g * mask)


def sigmoid(x: Tensor) -> Tensor:
    out = np.exp(-np.logaddexp(0, -x.data)).astype(x.dtype)
    return _unary(x, out, lambda g: g * out * (1 - out))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _unary(x, np.clip(x.data, lo, hi), lambda g: g * inside)


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "pow": pow,
    "neg": neg, "exp": exp, "log": log, "log1p": log1p, "sqrt": sqrt,
    "abs": abs, "relu": relu, "sigmoid": sigmoid,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(a) if b is None else fn(a, b)


# -- reductions -------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    data = np.sum(x.data, axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def rule(g):
        return np.broadcast_to(g.reshape(kept), x.shape)
    return _unary(x, data, rule)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    data = (np.sum(x.data, axis=axes, keepdims=keepdims, dtype=np.float64) / count).astype(x.dtype)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def rule(g):
        return np.broadcast_to(g.reshape(kept) / count, x.shape)
    return _unary(x, data, rule)


# -- structural -------------------------------------------------------------

def _axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)
    return _unary(x, data, lambda g: g.reshape(x.shape))


def cumsum(x: Tensor, axis: int = -1) -> Tensor:
    ax = _axis(axis, x.ndim)
    data = np.cumsum(x.data, axis=ax, dtype=np.float64).astype(x.dtype)

    def rule(g):
        return np.flip(np.cumsum(np.flip(g, ax), axis=ax, dtype=np.float64), ax)
    return _unary(x, data, rule)


def flip(x: Tensor, axis: int = -1) -> Tensor:
    ax = _axis(axis, x.ndim)
    return _unary(x, np.flip(x.data, ax).copy(), lambda g: np.flip(g, ax))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ax = _axis(axis, tensors[0].ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError("concat", ref, t.shape)
    data = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def rule(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) if t.requires_grad else None
            for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:])
        )
    return _result(data, tensors, rule)


def getitem(x: Tensor, index) -> Tensor:
    """Basic slicing (ints, slices with steps, Ellipsis, None)."""
    idx = index if isinstance(index, tuple) else (index,)
    for part in idx:
        if not (part is None or part is Ellipsis or isinstance(part, (int, slice, np.integer))):
            raise TypeError("only basic slicing is supported")
    try:
        data = x.data[index]
    except IndexError as exc:
        raise ValueError(str(exc)) from None
    if data.size == 0:
        raise ValueError(f"slice {index!r} of shape {x.shape} is empty")
    data = np.array(data, copy=True)

    def rule(g):
        out = np.zeros(x.shape, dtype=x.dtype)
        out[index] = g
        return out
    return _unary(x, data, rule)


def slice_axis(x: Tensor, axis: int, start: int, stop: int, step: int = 1) -> Tensor:
    ax = _axis(axis, x.ndim)
    n = x.shape[ax]
    if not (0 <= start < stop <= n):
        raise ValueError(f"slice [{start}:{stop}] invalid for extent {n}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop, step)
    return getitem(x, tuple(index))


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicitly repeat ``x`` along its size-1 axes."""
    shape = tuple(shape)
    if x.ndim != len(shape) or any(a != b and a != 1 for a, b in zip(x.shape, shape)):
        raise ShapeError("broadcast_to", x.shape, shape)
    axes = tuple(i for i, (a, b) in enumerate(zip(x.shape, shape)) if a != b)
    data = np.ascontiguousarray(np.broadcast_to(x.data, shape))

    def rule(g):
        return np.sum(g, axis=axes, keepdims=True, dtype=np.float64) if axes else g
    return _unary(x, data, rule)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean of an (N, C, H, W) map, giving (N, C)."""
    if x.ndim != 4:
        raise ShapeError("global_avg_pool", x.shape, ("N", "C", "H", "W"))
    return mean(x, axis=(2, 3))


def structural(kind: str, x, *args, **kwargs) -> Tensor:
    """Dispatch a structural operation by name."""
    table = {
        "cumsum": cumsum, "flip": flip, "concat": concat, "slice": slice_axis,
        "gap": global_avg_pool, "reshape": reshape, "broadcast_to": broadcast_to,
    }
    try:
        fn = table[kind]
    except KeyError:
        raise ValueError(f"unknown structural op {kind!r}") from None
    return fn(x, *args, **kwargs)
