"""Small reverse-mode differentiation engine over float64 numpy arrays.

Only the operations needed by the generator, measurement operators, feature
extractors and objectives are provided. Every op checks its output for
non-finite values and names itself in the error.

    >>> spec = GradSpec(lambda p: sum_(p["x"] * p["x"]), wrt=("x",))
    >>> gradient(spec, {"x": np.array([3.0, 4.0])})["x"]
    array([6., 8.])
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

LRELU_SLOPE = 0.2

_ids = itertools.count()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, message: str | None = None):
        super().__init__(message or f"non-finite value produced by '{op}'")
        self.op = op


def as_tensor(data, name: str = "tensor") -> np.ndarray:
    """Validate external input: float64 copy, finite, read-only."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("input", f"{name} contains NaN or Inf")
    arr.setflags(write=False)
    return arr


class Var:
    """Node of the computation graph.

    Leaves created with ``requires_grad=True`` are differentiable parameters;
    every other leaf is a constant. Interior nodes only record a backward rule
    when at least one parent needs a gradient.
    """

    __slots__ = ("value", "parents", "backward_fn", "op", "requires_grad", "_id", "name")
    __array_ufunc__ = None  # make ``ndarray <op> Var`` defer to the Var's reflected operator

    def __init__(self, value, parents=(), backward_fn=None, op="leaf",
                 requires_grad=False, name=None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad
        self._id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)


def param(value, name=None) -> Var:
    return Var(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)


def const(value) -> Var:
    if isinstance(value, Var):
        return value
    return Var(np.asarray(value, dtype=np.float64))


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _node(op: str, out: np.ndarray, parents: tuple, backward_fn) -> Var:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(op)
    if any(p.requires_grad for p in parents):
        return Var(out, parents, backward_fn, op, requires_grad=True)
    return Var(out, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Var:
    a, b = const(a), const(b)
    sa, sb = a.value.shape, b.value.shape
    return _node("add", a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    sa, sb = a.value.shape, b.value.shape
    return _node("sub", a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    av, bv = a.value, b.value

    def backward(g):
        return (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(g * av, bv.shape) if b.requires_grad else None)

    return _node("mul", av * bv, (a, b), backward)


def div(a, b) -> Var:
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av / bv

    def backward(g):
        ga = g / bv
        return _unbroadcast(ga, av.shape), _unbroadcast(-ga * out, bv.shape)

    return _node("div", out, (a, b), backward)


def square(a) -> Var:
    a = const(a)
    av = a.value
    return _node("square", av * av, (a,), lambda g: (2.0 * av * g,))


def sqrt(a) -> Var:
    a = const(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.value)
    return _node("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def power(a, p: float) -> Var:
    a = const(a)
    av = a.value
    with np.errstate(invalid="ignore", divide="ignore"):
        out = av ** p
    return _node("power", out, (a,), lambda g: (p * av ** (p - 1.0) * g,))


def lrelu(a, slope: float = LRELU_SLOPE) -> Var:
    # derivative at exactly 0 taken from the positive side
    a = const(a)
    d = np.where(a.value >= 0.0, 1.0, slope)
    return _node("lrelu", a.value * d, (a,), lambda g: (g * d,))


def sigmoid(a) -> Var:
    a = const(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Var:
    a = const(a)
    out = np.tanh(a.value)
    return _node("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Var:
    a = const(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _node("exp", out, (a,), lambda g: (g * out,))


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Var:
    """``a @ b`` for 1-D/2-D operands (numpy semantics)."""
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ShapeError(f"matmul expects 1-D or 2-D operands, got {av.shape} @ {bv.shape}")
    try:
        out = av @ bv
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch {av.shape} @ {bv.shape}") from exc

    def backward(g):
        a2 = av if av.ndim == 2 else av[None, :]
        b2 = bv if bv.ndim == 2 else bv[:, None]
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(av.shape) if a.requires_grad else None
        gb = (a2.T @ g2).reshape(bv.shape) if b.requires_grad else None
        return ga, gb

    return _node("matmul", out, (a, b), backward)


# -- reductions and shape ops ----------------------------------------------

def sum_(a, axis=None) -> Var:
    a = const(a)
    shape = a.value.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node("sum", np.asarray(a.value.sum(axis=axis)), (a,), backward)


def mean(a, axis=None) -> Var:
    a = const(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def reshape(a, shape) -> Var:
    a = const(a)
    old = a.value.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return _node("reshape", out, (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape) -> Var:
    a = const(a)
    old = a.value.shape
    return _node("broadcast", np.broadcast_to(a.value, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, old),))


def tile_rows(a, n: int) -> Var:
    """Stack ``n`` copies of a 1-D vector into an ``(n, d)`` matrix."""
    a = const(a)
    return broadcast_to(reshape(a, (1, -1)), (n, a.value.shape[0]))


def getitem(a, idx) -> Var:
    a = const(a)
    shape = a.value.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _node("getitem", np.array(a.value[idx]), (a,), backward)


def concat(parts: Sequence, axis: int = 0) -> Var:
    parts = tuple(const(p) for p in parts)
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _node("concat", np.concatenate([p.value for p in parts], axis=axis), parts,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def block_pool(a, k: int) -> Var:
    """k×k block average over the two leading axes of an (H, W, C) array."""
    a = const(a)
    h, w, c = a.value.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"pool factor {k} does not divide {h}x{w}")
    out = a.value.reshape(h // k, k, w // k, k, c).mean(axis=(1, 3))

    def backward(g):
        up = np.repeat(np.repeat(g, k, axis=0), k, axis=1)
        return (up / (k * k),)

    return _node("block_pool", out, (a,), backward)


# -- gradient contract --------------------------------------------------------

def backward(root: Var, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
    """Accumulate cotangents from ``root``; returns {id(leaf): grad} for parameters.

    The graph is not modified, so the same root can be swept with several seeds.
    """
    if seed is None:
        seed = np.ones_like(root.value)
    if not root.requires_grad:
        return {}
    nodes, stack, seen = [], [root], {id(root)}
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda n: n._id, reverse=True)

    grads = {id(root): np.asarray(seed, dtype=np.float64)}
    leaves = {}
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            leaves[id(node)] = g
            continue
        for p, gp in zip(node.parents, node.backward_fn(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            grads[key] = grads[key] + gp if key in grads else gp
    return leaves


@dataclass(frozen=True)
class GradSpec:
    """An objective closure plus the names of its differentiable parameters.

    ``objective`` receives a dict of Vars (marked ones carry gradients) and
    returns a scalar Var. ``shapes`` optionally pins parameter shapes.
    """

    objective: Callable[[dict[str, Var]], Var]
    wrt: tuple[str, ...]
    shapes: Mapping[str, tuple] = field(default_factory=dict)


@dataclass
class FDReport:
    max_rel_err: float
    per_param: dict[str, float]


def _build(spec: GradSpec, params: Mapping[str, np.ndarray]):
    for name in spec.wrt:
        if name not in params:
            raise ShapeError(f"missing differentiable parameter '{name}'")
    for name, shape in spec.shapes.items():
        if name not in params or np.shape(params[name]) != tuple(shape):
            raise ShapeError(f"parameter '{name}' expected shape {tuple(shape)}, "
                             f"got {np.shape(params.get(name))}")
    leaves = {k: (param(v, k) if k in spec.wrt else const(v)) for k, v in params.items()}
    out = spec.objective(leaves)
    if not isinstance(out, Var):
        out = const(out)
    if out.value.size != 1:
        raise ShapeError(f"objective must be scalar, got shape {out.value.shape}")
    return leaves, out


def eval_objective(spec: GradSpec, params: Mapping[str, np.ndarray]) -> float:
    _, out = _build(spec, params)
    return float(out.value)


def value_and_grad(spec: GradSpec, params: Mapping[str, np.ndarray]):
    leaves, out = _build(spec, params)
    got = backward(out, np.ones_like(out.value))
    grads = {}
    for name in spec.wrt:
        g = got.get(id(leaves[name]))
        grads[name] = np.zeros_like(leaves[name].value) if g is None else g.reshape(leaves[name].value.shape)
    return float(out.value), grads


def gradient(spec: GradSpec, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return value_and_grad(spec, params)[1]


def rel_err(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(1e-12, np.abs(a) + np.abs(b))


def finite_diff_check(spec: GradSpec, params: Mapping[str, np.ndarray], step: float = 1e-5) -> FDReport:
    """Compare analytic gradients with central differences, entry by entry."""
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = gradient(spec, params)
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    per_param = {}
    for name in spec.wrt:
        x = base[name]
        numeric = np.zeros_like(x)
        flat = x.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = eval_objective(spec, base)
            flat[i] = orig - step
            fm = eval_objective(spec, base)
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2.0 * step)
        per_param[name] = float(rel_err(analytic[name], numeric).max()) if x.size else 0.0
    return FDReport(max(per_param.values(), default=0.0), per_param)


def jacobian(fn: Callable[[Var], Var], x: np.ndarray) -> np.ndarray:
    """Dense Jacobian of a vector-valued ``fn`` at ``x``, one reverse sweep per output."""
    leaf = param(x)
    out = fn(leaf)
    flat_out = out.value.reshape(-1)
    jac = np.zeros((flat_out.size, np.size(x)))
    for j in range(flat_out.size):
        seed = np.zeros(flat_out.size)
        seed[j] = 1.0
        g = backward(out, seed.reshape(out.value.shape)).get(id(leaf))
        if g is not None:
            jac[j] = g.reshape(-1)
    return jac
