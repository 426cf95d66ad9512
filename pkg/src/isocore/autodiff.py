"""Reverse-mode differentiation over dense float64 arrays.

Each :class:`Tensor` produced by a differentiable primitive remembers its
parents and a closure that maps the output cotangent to input cotangents.
:func:`backward` orders the recorded nodes topologically (the tape), replays
the closures in reverse and accumulates into leaf ``grad`` buffers. The tape
is released afterwards; calling ``backward`` on the same loss again raises.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, UsageError

ArrayLike = "Tensor | np.ndarray | float | int | Sequence"

# Names of primitives whose backward rule is deliberately corrupted (gradcheck
# negative control). Empty in normal operation.
_FAULTY: set[str] = set()


@contextlib.contextmanager
def inject_fault(name: str):
    """Scale the backward output of primitive ``name`` by 1.5 inside the block."""
    _FAULTY.add(name)
    try:
        yield
    finally:
        _FAULTY.discard(name)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    # -- basic accessors -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar --------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)

    def assign(self, value: np.ndarray) -> None:
        value = np.array(value, dtype=np.float64)
        if value.shape != self.shape:
            raise DimensionError(f"cannot assign shape {value.shape} to parameter {self.name!r} of shape {self.shape}")
        value.flags.writeable = False
        self.data = value


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = parents
        if op in _FAULTY:
            inner = backward_fn

            def backward_fn(g, _inner=inner):
                return tuple(None if r is None else 1.5 * r for r in _inner(g))

        out._backward = backward_fn
    return out


def _broadcast_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 and a.ndim == 0 or b.size == 1 and b.ndim == 0:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape} (only equal shapes or a scalar operand)")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# -- elementwise ---------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "add")
    return _make(a.data + b.data, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "mul")
    return _make(
        a.data * b.data,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "div")
    out = a.data / b.data
    return _make(
        out,
        "div",
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return _make(np.abs(a.data), "abs", (a,), lambda g: (g * np.sign(a.data),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, "square", (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (0.5 * g / out,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    # d/dx log(1 + e^x) = sigmoid(x), written stably for both signs
    sig = np.exp(-np.logaddexp(0.0, -a.data))
    return _make(out, "softplus", (a,), lambda g: (g * sig,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "abs": abs,
    "square": square,
    "sqrt": sqrt,
    "softplus": softplus,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise UsageError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -- structural ------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, "matmul", (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T, "transpose", (a,), lambda g: (g.T,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def diag(v) -> Tensor:
    """Vector to diagonal matrix."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise DimensionError(f"diag expects a vector, got shape {v.shape}")
    return _make(np.diag(v.data), "diag", (v,), lambda g: (np.diagonal(g).copy(),))


def scale_rows(a, v) -> Tensor:
    """``diag(v) @ a`` without forming the diagonal matrix."""
    a, v = as_tensor(a), as_tensor(v)
    if a.ndim != 2 or v.ndim != 1 or v.shape[0] != a.shape[0]:
        raise DimensionError(f"scale_rows: matrix {a.shape} incompatible with row weights {v.shape}")
    return _make(
        a.data * v.data[:, None],
        "scale_rows",
        (a, v),
        lambda g: (g * v.data[:, None], np.einsum("ij,ij->i", g, a.data)),
    )


# -- reductions -------------------------------------------------------------------
def sum(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return _make(np.asarray(a.data.sum()), "sum", (a,), lambda g: (np.full(a.shape, float(g)),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return _make(np.asarray(a.data.mean()), "mean", (a,), lambda g: (np.full(a.shape, float(g) / n),))


def frobenius_norm(a) -> Tensor:
    a = as_tensor(a)
    nrm = float(np.sqrt(np.sum(a.data * a.data)))

    def bw(g):
        if nrm == 0.0:
            return (np.zeros(a.shape),)
        return (float(g) * a.data / nrm,)

    return _make(np.asarray(nrm), "frobenius_norm", (a,), bw)


_REDUCE = {"sum": sum, "mean": mean, "frobenius_norm": frobenius_norm}


def reduce(op: str, t) -> Tensor:
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise UsageError(f"unknown reduction {op!r}") from None
    return fn(t)


def custom(op: str, inputs: Iterable[Tensor], data: np.ndarray, backward_fn: Callable) -> Tensor:
    """Register a primitive defined elsewhere (e.g. the Procrustes projection)."""
    return _make(np.asarray(data, dtype=np.float64), op, tuple(inputs), backward_fn)


# -- tape replay -----------------------------------------------------------------
def _topological(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every ``requires_grad`` leaf reachable from ``loss``."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.size != 1 or loss.ndim != 0:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise UsageError("backward already replayed for this loss; rebuild the graph first")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any parameter that requires grad")

    tape = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    for node in tape:
        if not node.is_leaf:
            node._consumed = True
            node._parents = ()
            node._backward = None
