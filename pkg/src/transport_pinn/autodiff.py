"""Tape-based automatic differentiation with two forward tangent channels.

Every traced value carries its primal together with its directional
derivatives along ``t`` and ``x``.  The tape records, for each node, a local
reverse rule acting on all three channels, so a loss built from network
outputs *and* their input derivatives can be differentiated exactly with
respect to the parameters in one reverse sweep.

Values are numpy arrays (0-d for scalars); elementwise operations follow
numpy broadcasting, and ``matmul`` covers dense layers.  A tangent stored as
``None`` is an exact zero and is skipped in arithmetic.

Example::

    store = ParameterStore.from_values([3.0])
    with Tape() as tape:
        p = lift_param(store, 0)
        y = p * p
        backward(y, store)
    store.gradient  # array([6.])
"""

from __future__ import annotations

import builtins
import threading
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "LayerLayout",
    "ParameterStore",
    "Tape",
    "TracedValue",
    "active_tape",
    "lift_input",
    "lift_param",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "tanh",
    "matmul",
    "square",
    "sum",
    "mean",
    "reshape",
    "getitem",
    "tangent_t",
    "tangent_x",
    "backward",
    "finite_diff_gradient",
]

ROLES = ("t", "x", "v", "constant")


class AutodiffError(RuntimeError):
    """Misuse of the tape (no active tape, foreign node, bad index...)."""


# ---------------------------------------------------------------------------
# parameter storage


@dataclass(frozen=True)
class LayerLayout:
    """Slicing metadata for one dense layer inside the flat vector."""

    rows: int
    cols: int
    offset: int

    @property
    def weight_slice(self) -> slice:
        return slice(self.offset, self.offset + self.rows * self.cols)

    @property
    def bias_slice(self) -> slice:
        start = self.offset + self.rows * self.cols
        return slice(start, start + self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols + self.cols


@dataclass
class ParameterStore:
    """Flat float64 parameter vector, its gradient buffer and layer layout.

    Weight matrices are stored row-major with shape ``(fan_in, fan_out)`` so a
    layer acts as ``h @ W + b`` on row-batched activations.
    """

    values: np.ndarray
    layout: list[LayerLayout] = field(default_factory=list)
    gradient: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if self.layout:
            total = builtins.sum(layer.size for layer in self.layout)
            if total != self.values.size:
                raise ValueError(
                    f"layout describes {total} parameters, vector has {self.values.size}"
                )
        self.gradient = np.zeros_like(self.values)

    @classmethod
    def from_values(cls, values) -> "ParameterStore":
        return cls(np.asarray(values, dtype=np.float64))

    @classmethod
    def for_layers(cls, shapes: Sequence[tuple[int, int]]) -> "ParameterStore":
        """Zero-filled store for dense layers of the given (fan_in, fan_out)."""
        layout = []
        offset = 0
        for rows, cols in shapes:
            layer = LayerLayout(rows, cols, offset)
            layout.append(layer)
            offset += layer.size
        return cls(np.zeros(offset), layout)

    def __len__(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.gradient[:] = 0.0

    def weight(self, layer: int) -> np.ndarray:
        lay = self.layout[layer]
        return self.values[lay.weight_slice].reshape(lay.rows, lay.cols)

    def bias(self, layer: int) -> np.ndarray:
        return self.values[self.layout[layer].bias_slice]

    def copy(self) -> "ParameterStore":
        out = ParameterStore(self.values.copy(), list(self.layout))
        out.gradient[:] = self.gradient
        return out


# ---------------------------------------------------------------------------
# tape and traced values

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> "Tape":
    stack = _stack()
    if not stack:
        raise AutodiffError("no active tape; use `with Tape():`")
    return stack[-1]


# reverse rule: (out_value, (g_p, g_t, g_x)) -> per-input (g_p, g_t, g_x)
ReverseRule = Callable[["TracedValue", tuple], Sequence[tuple]]


@dataclass
class _Node:
    opcode: str
    inputs: tuple[int, ...]
    rule: ReverseRule | None
    param: tuple | None = None  # (store, slice) for parameter leaves


class Tape:
    """Append-only record of traced operations.

    One tape per thread is active at a time (``with Tape():``).  Tapes are
    cheap and are rebuilt for every loss evaluation.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.values: list[TracedValue] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, value: "TracedValue", opcode, inputs, rule, param=None):
        for i in inputs:
            if i >= len(self.nodes):
                raise AutodiffError("input node is not on this tape")
        value._tape = weakref.ref(self)
        value.index = len(self.nodes)
        self.nodes.append(_Node(opcode, tuple(inputs), rule, param))
        self.values.append(value)
        return value


class TracedValue:
    """Primal value plus its ``t``- and ``x``-tangents, recorded on a tape."""

    __slots__ = ("primal", "_tt", "_tx", "_tape", "index")
    __array_ufunc__ = None  # make ndarray ⊕ TracedValue defer to us

    def __init__(self, primal, tt=None, tx=None):
        self.primal = np.asarray(primal, dtype=np.float64)
        self._tt = tt
        self._tx = tx
        self._tape = None  # weak reference: the tape owns its values
        self.index = -1

    @property
    def tape(self) -> "Tape | None":
        return None if self._tape is None else self._tape()

    @property
    def tangent_t(self) -> np.ndarray:
        if self._tt is None:
            return np.zeros_like(self.primal)
        return np.broadcast_to(self._tt, self.primal.shape)

    @property
    def tangent_x(self) -> np.ndarray:
        if self._tx is None:
            return np.zeros_like(self.primal)
        return np.broadcast_to(self._tx, self.primal.shape)

    @property
    def shape(self) -> tuple:
        return self.primal.shape

    def item(self) -> float:
        return float(self.primal)

    def __repr__(self):
        return (
            f"TracedValue(primal={self.primal!r}, tangent_t={self.tangent_t!r}, "
            f"tangent_x={self.tangent_x!r})"
        )

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

    def __getitem__(self, key):
        return getitem(self, key)


# ---------------------------------------------------------------------------
# helpers for optional (None == 0) channels


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _mul(a, b):
    if a is None or b is None:
        return None
    return a * b


def _unbroadcast(g, shape):
    """Sum a gradient down to ``shape`` (reverse of numpy broadcasting)."""
    if g is None:
        return None
    g = np.asarray(g)
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_traced(value) -> TracedValue:
    if isinstance(value, TracedValue):
        if value.tape is not active_tape():
            raise AutodiffError("operand belongs to a different tape")
        return value
    return lift_input(value, "constant")


def _emit(opcode, primal, tt, tx, inputs, rule):
    out = TracedValue(primal, tt, tx)
    return active_tape()._record(out, opcode, [v.index for v in inputs], rule)


# ---------------------------------------------------------------------------
# leaves


def lift_input(value, role: str = "constant") -> TracedValue:
    """Place an input on the active tape with tangents seeded by ``role``.

    ``t`` gets unit ``t``-tangent, ``x`` unit ``x``-tangent; ``v`` and
    constants carry none.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    tape = active_tape()
    primal = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(primal)):
        raise ValueError("input value must be finite")
    ones = np.ones_like(primal)
    tt = ones if role == "t" else None
    tx = ones if role == "x" else None
    return tape._record(TracedValue(primal, tt, tx), f"input:{role}", (), None)


def lift_param(store: ParameterStore, index, shape=None) -> TracedValue:
    """Lift ``store.values[index]`` (an int or a slice) as a parameter leaf.

    The reverse sweep accumulates the leaf's adjoint into
    ``store.gradient[index]``.
    """
    tape = active_tape()
    n = len(store)
    if isinstance(index, slice):
        start, stop, step = index.indices(n)
        if step != 1 or not (0 <= start <= stop <= n):
            raise IndexError(f"bad parameter slice {index}")
        if index.stop is not None and index.stop > n:
            raise IndexError(f"parameter slice {index} exceeds store length {n}")
        sl = slice(start, stop)
        primal = store.values[sl]
    else:
        index = int(index)
        if not 0 <= index < n:
            raise IndexError(f"parameter index {index} out of range for length {n}")
        sl = slice(index, index + 1)
        primal = store.values[index]
    if shape is not None:
        primal = primal.reshape(shape)
    primal = np.array(primal, dtype=np.float64)
    out = TracedValue(primal)
    return tape._record(out, "param", (), None, param=(store, sl))


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> TracedValue:
    a, b = _as_traced(a), _as_traced(b)
    sa, sb = a.shape, b.shape

    def rule(out, g):
        return [tuple(_unbroadcast(c, sa) for c in g), tuple(_unbroadcast(c, sb) for c in g)]

    return _emit("add", a.primal + b.primal, _add(a._tt, b._tt), _add(a._tx, b._tx), (a, b), rule)


def neg(a) -> TracedValue:
    a = _as_traced(a)

    def rule(out, g):
        return [tuple(None if c is None else -c for c in g)]

    tt = None if a._tt is None else -a._tt
    tx = None if a._tx is None else -a._tx
    return _emit("neg", -a.primal, tt, tx, (a,), rule)


def sub(a, b) -> TracedValue:
    a, b = _as_traced(a), _as_traced(b)
    sa, sb = a.shape, b.shape

    def rule(out, g):
        return [
            tuple(_unbroadcast(c, sa) for c in g),
            tuple(None if c is None else -_unbroadcast(c, sb) for c in g),
        ]

    tt = _add(a._tt, None if b._tt is None else -b._tt)
    tx = _add(a._tx, None if b._tx is None else -b._tx)
    return _emit("sub", a.primal - b.primal, tt, tx, (a, b), rule)


def _bilinear(opcode, a, b, prod, left_adj, right_adj):
    """Product-rule node for a bilinear ``prod`` (elementwise or matmul).

    ``left_adj(g, b)`` / ``right_adj(a, g)`` are the transposed actions of
    ``prod`` in each argument.  With y = P(a, b) and y' = P(a', b) + P(a, b'),
    the reverse rule is
        ḡ_a  = L(g_p, b) + L(g_t, b_t) + L(g_x, b_x),   ḡ_a' = L(g_t', b)
    and symmetrically for b.
    """
    ap, bp = a.primal, b.primal
    att, atx, btt, btx = a._tt, a._tx, b._tt, b._tx

    def tangent(ad, bd):
        out = None
        if ad is not None:
            out = prod(ad, bp)
        if bd is not None:
            out = _add(out, prod(ap, bd))
        return out

    def rule(out, g):
        gp, gt, gx = g
        ga = [None, None, None]
        gb = [None, None, None]
        for gc, bd, ad, k in ((gt, btt, att, 1), (gx, btx, atx, 2)):
            if gc is None:
                continue
            # a structurally-zero tangent needs no adjoint
            if ad is not None:
                ga[k] = left_adj(gc, bp)
            if bd is not None:
                gb[k] = right_adj(ap, gc)
            if bd is not None:
                ga[0] = _add(ga[0], left_adj(gc, bd))
            if ad is not None:
                gb[0] = _add(gb[0], right_adj(ad, gc))
        if gp is not None:
            ga[0] = _add(ga[0], left_adj(gp, bp))
            gb[0] = _add(gb[0], right_adj(ap, gp))
        return [tuple(ga), tuple(gb)]

    return _emit(opcode, prod(ap, bp), tangent(att, btt), tangent(atx, btx), (a, b), rule)


def mul(a, b) -> TracedValue:
    a, b = _as_traced(a), _as_traced(b)
    sa, sb = a.shape, b.shape
    return _bilinear(
        "mul",
        a,
        b,
        np.multiply,
        lambda g, y: _unbroadcast(g * y, sa),
        lambda x, g: _unbroadcast(x * g, sb),
    )


def matmul(a, b) -> TracedValue:
    """Matrix product of 2-d traced values (``(n, k) @ (k, m)``)."""
    a, b = _as_traced(a), _as_traced(b)
    if a.primal.ndim != 2 or b.primal.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    return _bilinear(
        "matmul",
        a,
        b,
        np.matmul,
        lambda g, y: g @ y.T,
        lambda x, g: x.T @ g,
    )


def scale(a, c: float) -> TracedValue:
    """Multiply by a plain (untraced) real or array."""
    a = _as_traced(a)
    c = np.asarray(c, dtype=np.float64)
    sa = a.shape

    def rule(out, g):
        return [tuple(None if gc is None else _unbroadcast(gc * c, sa) for gc in g)]

    return _emit("scale", a.primal * c, _mul(a._tt, c), _mul(a._tx, c), (a,), rule)


def div(a, b) -> TracedValue:
    """Quotient a / b; implemented as a * reciprocal(b)."""
    b = _as_traced(b)
    if np.any(b.primal == 0.0):
        raise ZeroDivisionError("division by a zero primal")
    return mul(a, _reciprocal(b))


def _reciprocal(a: TracedValue) -> TracedValue:
    # y = 1/a, y' = -a'/a^2; d/da of the tangent: 2 a' / a^3
    inv = 1.0 / a.primal
    d1 = -inv * inv
    return _unary("reciprocal", a, inv, d1, lambda: -2.0 * d1 * inv)


def _unary(opcode, a, value, d1, d2_fn) -> TracedValue:
    """Elementwise y = φ(a) with φ' = d1 and φ'' supplied lazily by d2_fn."""
    tt = _mul(a._tt, d1)
    tx = _mul(a._tx, d1)
    att, atx = a._tt, a._tx

    def rule(out, g):
        gp, gt, gx = g
        # y_c = φ'(a)·a_c  ⇒  ∂y_c/∂a = φ''(a)·a_c, ∂y_c/∂a_c = φ'(a)
        ga = _mul(gp, d1)
        second = _add(_mul(gt, att), _mul(gx, atx))
        if second is not None:
            ga = _add(ga, second * d2_fn())
        gat = None if att is None else _mul(gt, d1)
        gax = None if atx is None else _mul(gx, d1)
        return [(ga, gat, gax)]

    return _emit(opcode, value, tt, tx, (a,), rule)


def tanh(a) -> TracedValue:
    a = _as_traced(a)
    y = np.tanh(a.primal)
    d1 = 1.0 - y * y
    return _unary("tanh", a, y, d1, lambda: -2.0 * y * d1)


def square(a) -> TracedValue:
    a = _as_traced(a)
    return _unary("square", a, a.primal * a.primal, 2.0 * a.primal, lambda: 2.0)


# ---------------------------------------------------------------------------
# shape operations and reductions


def sum(a, axis=None, keepdims: bool = False) -> TracedValue:  # noqa: A001
    a = _as_traced(a)
    shape = a.shape

    def red(c):
        return None if c is None else np.sum(np.broadcast_to(c, shape), axis=axis, keepdims=keepdims)

    def rule(out, g):
        def expand(gc):
            if gc is None:
                return None
            if axis is not None and not keepdims:
                gc = np.expand_dims(gc, axis)
            return np.broadcast_to(gc, shape)

        return [tuple(expand(gc) for gc in g)]

    return _emit("sum", red(a.primal), red(a._tt), red(a._tx), (a,), rule)


def mean(a, axis=None) -> TracedValue:
    a = _as_traced(a)
    n = a.primal.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


def reshape(a, shape) -> TracedValue:
    a = _as_traced(a)
    old = a.shape

    new = a.primal.reshape(shape).shape

    def rs(c, src, dst):
        return None if c is None else np.broadcast_to(c, src).reshape(dst)

    def rule(out, g):
        return [tuple(rs(gc, new, old) for gc in g)]

    return _emit("reshape", a.primal.reshape(new), rs(a._tt, old, new), rs(a._tx, old, new), (a,), rule)


def getitem(a, key) -> TracedValue:
    a = _as_traced(a)
    old = a.shape
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(k, (slice, int, type(Ellipsis))) or k is None for k in parts)

    def take(c):
        return None if c is None else np.broadcast_to(c, old)[key]

    def rule(out, g):
        def scatter(gc):
            if gc is None:
                return None
            full = np.zeros(old)
            if basic:
                full[key] += gc
            else:
                np.add.at(full, key, gc)
            return full

        return [tuple(scatter(gc) for gc in g)]

    return _emit("getitem", a.primal[key], take(a._tt), take(a._tx), (a,), rule)


def _channel(opcode, a, k) -> TracedValue:
    a = _as_traced(a)
    source = a._tt if k == 1 else a._tx
    primal = np.zeros(a.shape) if source is None else np.broadcast_to(source, a.shape).copy()

    def rule(out, g):
        adj = [None, None, None]
        adj[k] = g[0]
        return [tuple(adj)]

    # second input derivatives are out of scope: the new value has no tangents
    return _emit(opcode, primal, None, None, (a,), rule)


def tangent_t(a) -> TracedValue:
    """The ``t``-tangent of ``a`` as a traced value (differentiable in θ)."""
    return _channel("tangent_t", a, 1)


def tangent_x(a) -> TracedValue:
    """The ``x``-tangent of ``a`` as a traced value (differentiable in θ)."""
    return _channel("tangent_x", a, 2)


# ---------------------------------------------------------------------------
# reverse sweep


def backward(loss: TracedValue, store: ParameterStore, seed: float = 1.0) -> None:
    """Accumulate ∂loss/∂θ into ``store.gradient``.

    The tape is left untouched; calling ``backward`` again from another node
    (or the same one) on the same tape is allowed.
    """
    tape = loss.tape
    if tape is None or loss.index < 0 or tape.values[loss.index] is not loss:
        raise AutodiffError("loss node is not on a tape")
    if loss.primal.size != 1:
        raise AutodiffError("backward needs a scalar loss")
    adjoint: list = [None] * len(tape.nodes)
    adjoint[loss.index] = (np.full(loss.shape, float(seed)), None, None)
    for i in range(loss.index, -1, -1):
        g = adjoint[i]
        if g is None:
            continue
        adjoint[i] = None
        node = tape.nodes[i]
        if node.param is not None:
            owner, sl = node.param
            if owner is store and g[0] is not None:
                store.gradient[sl] += np.reshape(g[0], -1)
            continue
        if node.rule is None:
            continue
        contributions = node.rule(tape.values[i], g)
        for j, gin in zip(node.inputs, contributions):
            prev = adjoint[j]
            if prev is None:
                adjoint[j] = gin
            else:
                adjoint[j] = tuple(_add(p, q) for p, q in zip(prev, gin))


def finite_diff_gradient(fn: Callable[[np.ndarray], float], store: ParameterStore, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``fn(values)`` at ``store.values``."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = store.values.copy()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        fp = fn(theta.copy())
        theta[i] = orig - h
        fm = fn(theta.copy())
        theta[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
