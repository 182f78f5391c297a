"""Tape-based reverse-mode differentiation over numpy arrays.

Every primitive is applied to whole arrays (a mini-batch at a time), so one
tape node covers a full vectorised operation.  Operations accept any mix of
:class:`Var` and plain arrays / floats; when no argument lives on a tape the
result is a plain ``numpy`` array and nothing is recorded.  This lets the
same model code serve both training (recorded) and evaluation (plain numpy).

Subgradient conventions at kinks: ``relu'(0) = 0``, ``abs'(0) = 0``,
``norm'(0) = 0`` and ``maximum`` / ``minimum`` route the gradient of a tie
to the first argument.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "DomainError",
    "NonFiniteError",
    "Tape",
    "Var",
    "abs",
    "add",
    "affine",
    "concatenate",
    "div",
    "dot",
    "maximum",
    "mean",
    "minimum",
    "mul",
    "neg",
    "norm",
    "relu",
    "sigmoid",
    "sqrt",
    "stack",
    "sub",
    "sum",
    "tanh",
    "value_of",
]

_builtin_abs = abs
_builtin_sum = sum


class AutodiffError(RuntimeError):
    pass


class DomainError(AutodiffError, ValueError):
    """Raised for division by zero or the square root of a negative number."""


class NonFiniteError(AutodiffError, FloatingPointError):
    """Raised when a recorded value contains NaN or infinity."""


class _Node:
    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op: str, parents: tuple, vjp: Callable | None):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Append-only record of primitive applications.

    Nodes are stored in creation order, which is a topological order since a
    node can only reference values that already exist.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def variable(self, value) -> "Var":
        """Register a leaf (a parameter or an input we differentiate by)."""
        value = np.array(value, dtype=np.float64)
        _check_finite("leaf", value)
        self.nodes.append(_Node("leaf", (), None))
        return Var(value, self, len(self.nodes) - 1)

    def record(self, op: str, *inputs, **kwargs):
        """Apply primitive ``op`` by name; see ``PRIMITIVES`` for the set."""
        try:
            fn = PRIMITIVES[op]
        except KeyError:
            raise AutodiffError(f"unknown primitive {op!r}") from None
        for x in inputs:
            if isinstance(x, Var) and x.tape is not self:
                raise AutodiffError("input lives on a different tape")
        return fn(*inputs, **kwargs)

    def _push(self, op, value, parents, vjp) -> "Var":
        _check_finite(op, value)
        self.nodes.append(_Node(op, parents, vjp))
        return Var(value, self, len(self.nodes) - 1)

    def gradient(self, output: "Var", wrt: Sequence["Var"]) -> list[np.ndarray]:
        """Return d(output)/d(w) for every ``w`` in ``wrt``.

        ``output`` must be a scalar recorded on this tape.  Entries of ``wrt``
        that do not influence ``output`` get a zero array.
        """
        if not isinstance(output, Var) or output.tape is not self:
            raise AutodiffError("output is not recorded on this tape")
        if output.value.size != 1:
            raise AutodiffError(f"output must be scalar, got shape {output.value.shape}")
        for w in wrt:
            if not isinstance(w, Var) or w.tape is not self:
                raise AutodiffError("gradient requested for a value not on this tape")
        grads: list = [None] * (output.index + 1)
        grads[output.index] = np.ones_like(output.value)
        nodes = self.nodes
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = nodes[i]
            if node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for p, pg in zip(node.parents, parent_grads):
                if p < 0 or pg is None:
                    continue
                if grads[p] is None:
                    grads[p] = pg
                else:
                    grads[p] = grads[p] + pg
        out = []
        for w in wrt:
            g = grads[w.index] if w.index <= output.index else None
            out.append(np.zeros_like(w.value) if g is None else np.asarray(g, dtype=np.float64))
        return out


class Var:
    """An array value together with its position on a tape."""

    __slots__ = ("value", "tape", "index")
    __array_priority__ = 1000

    def __init__(self, value: np.ndarray, tape: Tape, index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, node={self.index})"

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

    def __getitem__(self, key):
        return _getitem(self, key)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _check_finite(op, value):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by {op!r}")


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise AutodiffError("inputs live on different tapes")
    return tape


def _idx(x) -> int:
    return x.index if isinstance(x, Var) else -1


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = av.shape, bv.shape
    return tape._push("+", out, (_idx(a), _idx(b)),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = av.shape, bv.shape
    return tape._push("-", out, (_idx(a), _idx(b)),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a):
    av = value_of(a)
    tape = _tape_of(a)
    if tape is None:
        return -av
    return tape._push("neg", -av, (_idx(a),), lambda g: (-g,))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = av.shape, bv.shape
    return tape._push("*", out, (_idx(a), _idx(b)),
                      lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    if np.any(bv == 0.0):
        raise DomainError("division by zero")
    out = av / bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = av.shape, bv.shape
    return tape._push("/", out, (_idx(a), _idx(b)),
                      lambda g: (_unbroadcast(g / bv, sa),
                                 _unbroadcast(-g * out / bv, sb)))


def maximum(a, b):
    av, bv = value_of(a), value_of(b)
    out = np.maximum(av, bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    first = av >= bv
    sa, sb = av.shape, bv.shape
    return tape._push("max", out, (_idx(a), _idx(b)),
                      lambda g: (_unbroadcast(np.where(first, g, 0.0), sa),
                                 _unbroadcast(np.where(first, 0.0, g), sb)))


def minimum(a, b):
    av, bv = value_of(a), value_of(b)
    out = np.minimum(av, bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    first = av <= bv
    sa, sb = av.shape, bv.shape
    return tape._push("min", out, (_idx(a), _idx(b)),
                      lambda g: (_unbroadcast(np.where(first, g, 0.0), sa),
                                 _unbroadcast(np.where(first, 0.0, g), sb)))


# ----------------------------------------------------------------- unary maps


def relu(a):
    av = value_of(a)
    out = np.maximum(av, 0.0)
    tape = _tape_of(a)
    if tape is None:
        return out
    mask = av > 0.0
    return tape._push("relu", out, (_idx(a),), lambda g: (g * mask,))


def sigmoid(a):
    av = value_of(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * av))
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape._push("sigmoid", out, (_idx(a),), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    av = value_of(a)
    out = np.tanh(av)
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape._push("tanh", out, (_idx(a),), lambda g: (g * (1.0 - out * out),))


def sqrt(a):
    av = value_of(a)
    if np.any(av < 0.0):
        raise DomainError("square root of a negative number")
    out = np.sqrt(av)
    tape = _tape_of(a)
    if tape is None:
        return out
    if np.any(out == 0.0):
        raise DomainError("square root is not differentiable at 0")
    return tape._push("sqrt", out, (_idx(a),), lambda g: (0.5 * g / out,))


def abs(a):  # noqa: A001 - mirrors the numpy name
    av = value_of(a)
    out = np.abs(av)
    tape = _tape_of(a)
    if tape is None:
        return out
    sign = np.sign(av)
    return tape._push("abs", out, (_idx(a),), lambda g: (g * sign,))


def norm(a, axis: int = -1, keepdims: bool = False):
    """Euclidean norm along ``axis``; the subgradient at 0 is 0."""
    av = value_of(a)
    out = np.sqrt(np.sum(av * av, axis=axis, keepdims=keepdims))
    tape = _tape_of(a)
    if tape is None:
        return out

    def vjp(g):
        n = out if keepdims else np.expand_dims(out, axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(n > 0.0, n, 1.0)
        return (np.where(n > 0.0, gg * av / safe, 0.0),)

    return tape._push("norm", out, (_idx(a),), vjp)


# ---------------------------------------------------------- linear algebra


def affine(x, w):
    """``x @ w[:, :-1].T + w[:, -1]`` for a weight matrix with folded bias."""
    xv, wv = value_of(x), value_of(w)
    lin = wv[:, :-1]
    out = xv @ lin.T + wv[:, -1]
    tape = _tape_of(x, w)
    if tape is None:
        return out
    x_on_tape = isinstance(x, Var)
    w_on_tape = isinstance(w, Var)

    def vjp(g):
        gx = g @ lin if x_on_tape else None
        gw = None
        if w_on_tape:
            g2 = g.reshape(-1, g.shape[-1])
            x2 = xv.reshape(-1, xv.shape[-1])
            gw = np.empty_like(wv)
            gw[:, :-1] = g2.T @ x2
            gw[:, -1] = g2.sum(axis=0)
        return gx, gw

    return tape._push("affine", out, (_idx(x), _idx(w)), vjp)


def dot(a, b, axis: int = -1):
    """Inner product along ``axis`` (batched)."""
    return sum(mul(a, b), axis=axis)


# ------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001
    av = value_of(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    tape = _tape_of(a)
    if tape is None:
        return out
    shape = av.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return tape._push("sum", np.asarray(out), (_idx(a),), vjp)


def mean(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    count = av.size if axis is None else av.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ----------------------------------------------------------- restructuring


def _getitem(a, key):
    av = value_of(a)
    out = av[key]
    tape = _tape_of(a)
    if tape is None:
        return out
    shape = av.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, key, g) if _needs_add_at(key) else full.__setitem__(key, g)
        return (full,)

    return tape._push("getitem", np.array(out), (_idx(a),), vjp)


def _needs_add_at(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


def stack(items: Sequence, axis: int = 0):
    vals = [value_of(x) for x in items]
    out = np.stack(vals, axis=axis)
    tape = _tape_of(*items)
    if tape is None:
        return out
    shapes = [v.shape for v in vals]

    def vjp(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(_unbroadcast(parts[i], shapes[i]) for i in range(len(shapes)))

    return tape._push("stack", out, tuple(_idx(x) for x in items), vjp)


def concatenate(items: Sequence, axis: int = 0):
    vals = [value_of(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    tape = _tape_of(*items)
    if tape is None:
        return out
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tape._push("concat", out, tuple(_idx(x) for x in items),
                      lambda g: tuple(np.split(g, splits, axis=axis)))


PRIMITIVES: dict[str, Callable] = {
    "+": add,
    "-": sub,
    "*": mul,
    "/": div,
    "max": maximum,
    "min": minimum,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "sqrt": sqrt,
    "abs": abs,
    "norm": norm,
    "dot": dot,
    "affine": affine,
    "sum": sum,
    "mean": mean,
    "neg": neg,
}
