"""Dense-tensor automatic differentiation.

Reverse mode records primitives on an explicit :class:`Tape`.  Forward-mode
tangents are carried by :class:`Dual` values whose propagation rules are
written with the same primitives, so a tangent computed inside a taped
region is itself reverse-differentiable, and ``jvp`` calls nest.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import expit

__all__ = [
    "Tensor", "Dual", "Tape", "ShapeError", "DomainError", "NonFiniteError",
    "LinearSolver", "grad", "value_and_grad", "jvp", "gradient_check", "value",
    "add", "sub", "mul", "div", "neg", "matmul", "exp", "log", "square", "sqrt",
    "sigmoid", "softplus", "swish", "tanh", "sin", "cos", "absolute",
    "sum", "mean", "reshape", "transpose", "take", "concatenate", "solve_const",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, op: str | None = None, node: int | None = None):
        super().__init__(message)
        self.op = op
        self.node = node


class Node:
    __slots__ = ("index", "op", "parents", "vjp", "tape")

    def __init__(self, index, op, parents, vjp, tape):
        self.index = index
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.tape = tape


_TAPES: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tape:
    """Append-only record of primitive applications.

    Nodes only reference earlier nodes, so a single reverse sweep over
    ``nodes`` visits each node once in reverse creation order.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def _record(self, op, parents, vjp) -> Node:
        node = Node(len(self.nodes), op, parents, vjp, self)
        self.nodes.append(node)
        return node

    def watch(self, array) -> "Tensor":
        data = np.array(value(array), dtype=np.float64)
        return Tensor(data, self._record("leaf", (), None))

    def backward(self, out: "Tensor", seed=1.0) -> list:
        """Reverse sweep; returns cotangents indexed by node position."""
        if out.node is None or out.node.tape is not self:
            return [None] * len(self.nodes)
        cots: list = [None] * len(self.nodes)
        cots[out.node.index] = np.broadcast_to(np.asarray(seed, dtype=np.float64), out.data.shape).copy()
        for node in reversed(self.nodes[: out.node.index + 1]):
            g = cots[node.index]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent is None or pg is None:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NonFiniteError(
                        f"non-finite cotangent from node {node.index} ({node.op})", node.op, node.index
                    )
                prev = cots[parent.index]
                cots[parent.index] = pg if prev is None else prev + pg
        return cots


class _Ops:
    """Operator sugar shared by Tensor and Dual."""

    __array_priority__ = 1000

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, idx): return take(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tensor(_Ops):
    """Immutable float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "node", "_memo")

    def __init__(self, data, node: Node | None = None):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else np.asarray(data, dtype=np.float64)
        self.node = node
        self._memo = None

    def memo(self, key: str, fn):
        """Cache a pure function of ``data`` (tensors are immutable)."""
        if self._memo is None:
            self._memo = {}
        out = self._memo.get(key)
        if out is None:
            out = self._memo[key] = fn(self.data)
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, taped={self.node is not None})"


_TAGS = itertools.count(1)


class Dual(_Ops):
    """A primal with a tangent; ``tangent=None`` means an exact zero."""

    __slots__ = ("primal", "tangent", "tag")

    def __init__(self, primal, tangent, tag: int):
        self.primal = primal
        self.tangent = tangent
        self.tag = tag

    @property
    def shape(self) -> tuple:
        return self.primal.shape

    @property
    def ndim(self) -> int:
        return len(self.shape)


def value(x) -> np.ndarray:
    """Strip tape nodes and tangents down to the plain numpy value."""
    while isinstance(x, Dual):
        x = x.primal
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _taped(inputs) -> bool:
    tape = _active_tape()
    if tape is None:
        return False
    for t in inputs:
        if t.node is not None and t.node.tape is tape:
            return True
    return False


def _emit(op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite output from {op}", op)
    if not _taped(inputs):
        return Tensor(out)
    tape = _active_tape()
    parents = tuple(t.node if (t.node is not None and t.node.tape is tape) else None for t in inputs)
    return Tensor(out, tape._record(op, parents, vjp))


def _top_tag(*xs) -> int | None:
    tags = [x.tag for x in xs if isinstance(x, Dual)]
    return max(tags) if tags else None


def _split(x, tag):
    """(primal, tangent) of ``x`` with respect to ``tag``."""
    if isinstance(x, Dual) and x.tag == tag:
        return x.primal, x.tangent
    return x, None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _zeros_like(x):
    return Tensor(np.zeros(value(x).shape))


# ---------------------------------------------------------------- binary ops

def add(a, b):
    tag = _top_tag(a, b)
    if tag is not None:
        ap, at = _split(a, tag)
        bp, bt = _split(b, tag)
        t = at if bt is None else (bt if at is None else add(at, bt))
        return Dual(add(ap, bp), t, tag)
    a, b = _tensor(a), _tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    tag = _top_tag(a, b)
    if tag is not None:
        ap, at = _split(a, tag)
        bp, bt = _split(b, tag)
        t = at if bt is None else (neg(bt) if at is None else sub(at, bt))
        return Dual(sub(ap, bp), t, tag)
    a, b = _tensor(a), _tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    tag = _top_tag(a, b)
    if tag is not None:
        ap, at = _split(a, tag)
        bp, bt = _split(b, tag)
        t = None
        if at is not None:
            t = mul(at, bp)
        if bt is not None:
            t = mul(ap, bt) if t is None else add(t, mul(ap, bt))
        return Dual(mul(ap, bp), t, tag)
    a, b = _tensor(a), _tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    tag = _top_tag(a, b)
    if tag is not None:
        ap, at = _split(a, tag)
        bp, bt = _split(b, tag)
        y = div(ap, bp)
        t = at
        if bt is not None:
            t = neg(mul(y, bt)) if t is None else sub(t, mul(y, bt))
        return Dual(y, None if t is None else div(t, bp), tag)
    a, b = _tensor(a), _tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def matmul(a, b):
    tag = _top_tag(a, b)
    if tag is not None:
        ap, at = _split(a, tag)
        bp, bt = _split(b, tag)
        t = None
        if at is not None:
            t = matmul(at, bp)
        if bt is not None:
            t = matmul(ap, bt) if t is None else add(t, matmul(ap, bt))
        return Dual(matmul(ap, bp), t, tag)
    a, b = _tensor(a), _tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    parents: list = [None]

    def vjp(g):
        pa, pb = parents[0]
        ga = None if pa is None else g @ bd.T
        if pb is None:
            gb = None
        else:
            gb = np.outer(ad, g) if ad.ndim == 1 else ad.T @ g
        return ga, gb

    out = _emit("matmul", ad @ bd, (a, b), vjp)
    if out.node is not None:
        parents[0] = out.node.parents
    return out


# ----------------------------------------------------------------- unary ops

def neg(x):
    if isinstance(x, Dual):
        return Dual(neg(x.primal), None if x.tangent is None else neg(x.tangent), x.tag)
    x = _tensor(x)
    return _emit("neg", -x.data, (x,), lambda g: (-g,))


def exp(x):
    if isinstance(x, Dual):
        y = exp(x.primal)
        return Dual(y, None if x.tangent is None else mul(y, x.tangent), x.tag)
    x = _tensor(x)
    out = np.exp(x.data)
    return _emit("exp", out, (x,), lambda g: (g * out,))


def log(x):
    if isinstance(x, Dual):
        return Dual(log(x.primal), None if x.tangent is None else div(x.tangent, x.primal), x.tag)
    x = _tensor(x)
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log of non-positive input")
    return _emit("log", np.log(xd), (x,), lambda g: (g / xd,))


def square(x):
    if isinstance(x, Dual):
        t = None if x.tangent is None else mul(mul(2.0, x.primal), x.tangent)
        return Dual(square(x.primal), t, x.tag)
    x = _tensor(x)
    xd = x.data
    return _emit("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def sqrt(x):
    if isinstance(x, Dual):
        y = sqrt(x.primal)
        return Dual(y, None if x.tangent is None else div(x.tangent, mul(2.0, y)), x.tag)
    x = _tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("sqrt of non-positive input")
    out = np.sqrt(x.data)
    return _emit("sqrt", out, (x,), lambda g: (0.5 * g / out,))


def _swish_tower(x, s, k):
    if k == 0:
        return x * s
    if k == 1:
        return s + x * s * (1.0 - s)
    a = s * (1.0 - s)
    c = 1.0 - 2.0 * s
    b = 2.0 + x * c
    if k == 2:
        return a * b
    return a * c * b + a * (c - 2.0 * x * a)


def _tanh_tower(x, y, k):
    if k == 0:
        return y
    q = 1.0 - y * y
    if k == 1:
        return q
    if k == 2:
        return -2.0 * y * q
    return q * (6.0 * y * y - 2.0)


def _sigmoid_tower(x, s, k):
    if k == 0:
        return s
    a = s * (1.0 - s)
    if k == 1:
        return a
    if k == 2:
        return a * (1.0 - 2.0 * s)
    return a * (1.0 - 6.0 * s + 6.0 * s * s)


def _softplus_tower(x, s, k):
    if k == 0:
        return np.logaddexp(0.0, x)
    return _sigmoid_tower(x, s, k - 1)


# name -> (tower, shared intermediate)
_TOWERS = {
    "swish": (_swish_tower, expit),
    "tanh": (_tanh_tower, np.tanh),
    "sigmoid": (_sigmoid_tower, expit),
    "softplus": (_softplus_tower, expit),
}
_MAX_ORDER = 3


def _tower(name: str, k: int, x):
    """k-th derivative of a smooth pointwise function, itself differentiable.

    Tangent and cotangent rules use the (k+1)-th derivative directly, which
    keeps nested forward-over-reverse passes to one array op per level.
    """
    if isinstance(x, Dual):
        t = None if x.tangent is None else mul(_tower(name, k + 1, x.primal), x.tangent)
        return Dual(_tower(name, k, x.primal), t, x.tag)
    if k > _MAX_ORDER:
        raise NotImplementedError(f"derivatives of {name} beyond order {_MAX_ORDER - 1} are not supported")
    x = _tensor(x)
    fn, inner = _TOWERS[name]
    xd = x.data
    s = x.memo(inner.__name__, inner)
    op = name if k == 0 else f"{name}^({k})"
    out = x.memo(op, lambda d: fn(d, s, k))
    if k == _MAX_ORDER:
        return _emit(op, out, (x,), lambda g: (_raise_order(name),))
    nxt = f"{name}^({k + 1})"
    return _emit(op, out, (x,), lambda g: (g * x.memo(nxt, lambda d: fn(d, s, k + 1)),))


def _raise_order(name):
    raise NotImplementedError(f"derivatives of {name} beyond order {_MAX_ORDER} are not supported")


def sigmoid(x):
    return _tower("sigmoid", 0, x)


def softplus(x):
    return _tower("softplus", 0, x)


def swish(x):
    return _tower("swish", 0, x)


def tanh(x):
    return _tower("tanh", 0, x)


def sin(x):
    if isinstance(x, Dual):
        t = None if x.tangent is None else mul(cos(x.primal), x.tangent)
        return Dual(sin(x.primal), t, x.tag)
    x = _tensor(x)
    xd = x.data
    return _emit("sin", np.sin(xd), (x,), lambda g: (g * np.cos(xd),))


def cos(x):
    if isinstance(x, Dual):
        t = None if x.tangent is None else neg(mul(sin(x.primal), x.tangent))
        return Dual(cos(x.primal), t, x.tag)
    x = _tensor(x)
    xd = x.data
    return _emit("cos", np.cos(xd), (x,), lambda g: (-g * np.sin(xd),))


def absolute(x):
    # sign(0) = 0 picks the zero subgradient
    if isinstance(x, Dual):
        t = None if x.tangent is None else mul(np.sign(value(x.primal)), x.tangent)
        return Dual(absolute(x.primal), t, x.tag)
    x = _tensor(x)
    xd = x.data
    return _emit("abs", np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


# ------------------------------------------------------------ structural ops

def sum(x, axis=None, keepdims=False):  # noqa: A001
    if isinstance(x, Dual):
        t = None if x.tangent is None else sum(x.tangent, axis, keepdims)
        return Dual(sum(x.primal, axis, keepdims), t, x.tag)
    x = _tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    n = value(x).size if axis is None else np.prod([value(x).shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / float(n))


def reshape(x, shape):
    if isinstance(x, Dual):
        t = None if x.tangent is None else reshape(x.tangent, shape)
        return Dual(reshape(x.primal, shape), t, x.tag)
    x = _tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {shape}") from None
    return _emit("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x):
    if isinstance(x, Dual):
        t = None if x.tangent is None else transpose(x.tangent)
        return Dual(transpose(x.primal), t, x.tag)
    x = _tensor(x)
    return _emit("transpose", x.data.T, (x,), lambda g: (g.T,))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def take(x, idx):
    """Basic or integer-array indexing (``x[idx]``)."""
    if isinstance(x, Dual):
        t = None if x.tangent is None else take(x.tangent, idx)
        return Dual(take(x.primal, idx), t, x.tag)
    x = _tensor(x)
    shape = x.shape

    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _emit("take", x.data[idx], (x,), vjp)


def concatenate(xs: Sequence, axis: int = 0):
    tag = _top_tag(*xs)
    if tag is not None:
        parts = [_split(x, tag) for x in xs]
        prim = concatenate([p for p, _ in parts], axis)
        if all(t is None for _, t in parts):
            return Dual(prim, None, tag)
        tans = [(_zeros_like(p) if t is None else t) for p, t in parts]
        return Dual(prim, concatenate(tans, axis), tag)
    ts = [_tensor(x) for x in xs]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concatenate: incompatible shapes " + ", ".join(str(t.shape) for t in ts)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit("concatenate", out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


class LinearSolver:
    """Cached LU factorization of a constant square matrix."""

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ShapeError(f"LinearSolver: matrix must be square, got {matrix.shape}")
        self.n = matrix.shape[0]
        self.cond = float(np.linalg.cond(matrix))
        if not np.isfinite(self.cond) or self.cond > 1e14:
            raise np.linalg.LinAlgError(f"matrix is singular to working precision (cond={self.cond:.3e})")
        self.lu = lu_factor(matrix)

    def solve(self, rhs: np.ndarray, trans: int = 0) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=np.float64)
        flat = rhs.reshape(-1, self.n)
        return lu_solve(self.lu, flat.T, trans=trans).T.reshape(rhs.shape)


def solve_const(solver: LinearSolver, x):
    """Solve ``A y = x`` along the last axis of ``x`` for a constant ``A``."""
    if isinstance(x, Dual):
        t = None if x.tangent is None else solve_const(solver, x.tangent)
        return Dual(solve_const(solver, x.primal), t, x.tag)
    x = _tensor(x)
    if x.shape[-1] != solver.n:
        raise ShapeError(f"solve_const: last axis {x.shape} does not match matrix size {solver.n}")
    return _emit("solve_const", solver.solve(x.data), (x,), lambda g: (solver.solve(g, trans=1),))


# ------------------------------------------------------------ transformations

def value_and_grad(fn: Callable, params: Sequence) -> tuple[float, list[np.ndarray]]:
    """Evaluate a scalar ``fn(*params)`` and its gradient w.r.t. every param."""
    with Tape() as tape:
        watched = [tape.watch(p) for p in params]
        out = fn(*watched)
        if isinstance(out, Dual):
            raise TypeError("loss must not carry a forward tangent")
        out = _tensor(out)
        if out.data.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {out.shape}")
        cots = tape.backward(out)
    grads = []
    for w in watched:
        g = cots[w.node.index]
        grads.append(np.zeros_like(w.data) if g is None else g.reshape(w.shape))
    return float(out.data.reshape(())), grads


def grad(fn: Callable, params: Sequence) -> list[np.ndarray]:
    return value_and_grad(fn, params)[1]


def jvp(fn: Callable, x, tangent):
    """Return ``(fn(x), J_fn(x) @ tangent)``.

    The result stays on any active tape, and ``fn`` may itself call ``jvp``.
    """
    tv = value(tangent)
    if tv.shape != value(x).shape:
        raise ShapeError(f"jvp: tangent shape {tv.shape} does not match input shape {value(x).shape}")
    tag = next(_TAGS)
    out = fn(Dual(x, tangent if isinstance(tangent, (Tensor, Dual)) else Tensor(tv), tag))
    if isinstance(out, Dual) and out.tag == tag:
        t = out.tangent if out.tangent is not None else _zeros_like(out.primal)
        return out.primal, t
    return out, _zeros_like(out)


def gradient_check(fn: Callable, point, step: float = 1e-5) -> float:
    """Max relative deviation of the reverse gradient from central differences.

    ``fn`` maps one array to a scalar; the error on each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    point = np.array(point, dtype=np.float64)
    analytic = grad(lambda p: fn(p), [point])[0].ravel()
    flat = point.ravel()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += step
        dn[i] -= step
        fu = float(value(fn(Tensor(up.reshape(point.shape)))).reshape(()))
        fd = float(value(fn(Tensor(dn.reshape(point.shape)))).reshape(()))
        numeric[i] = (fu - fd) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
