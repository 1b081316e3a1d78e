"""Reverse-mode automatic differentiation over numpy arrays.

The engine records one graph node per array operation during the forward
pass and replays adjoints in reverse creation order, which is a valid
topological order because parents always exist before their children.
Evaluation is single-threaded numpy with a fixed reduction order, so two
runs on identical inputs produce bit-identical gradients.

Branchy operations (``where``, ``minimum``, gather/``__getitem__``) resolve
their subgradient by the branch the forward pass took; the finite-difference
harness (:func:`fd_check`) detects and skips coordinates whose neighborhood
crosses such a branch.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UnsupportedOpError

_COUNTER = itertools.count()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Var:
    """An array-valued node in the gradient graph.

    Supports the arithmetic operators plus the module-level math functions;
    mixing with plain ndarrays/scalars treats those as constants.
    """

    __slots__ = ("value", "grad", "_parents", "_backward", "_id", "_op")

    def __init__(self, value, parents=(), backward=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(p for p in parents if isinstance(p, Var))
        self._backward = backward
        self._id = next(_COUNTER)
        self._op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self._op!r}, shape={self.value.shape})"

    def __array__(self, dtype=None, copy=None):
        raise UnsupportedOpError(
            "implicit ndarray conversion",
            "a numpy routine outside the gradient graph received a Var; "
            "use value() / detach() if the dependence is intentional",
        )

    def detach(self) -> np.ndarray:
        """Forward value with the gradient path cut."""
        return self.value

    # -- operators ---------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __getitem__(self, idx):
        return take(self, idx)


def value(x) -> np.ndarray:
    """Forward value of a Var or ndarray-like."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def is_var(x) -> bool:
    return isinstance(x, Var)


def _binary(a, b, out, da, db, op):
    """Build a node for an elementwise binary op; da/db map g -> parent grad."""
    parents = []
    slots = []
    if isinstance(a, Var):
        parents.append(a)
        slots.append(("a", a.value.shape))
    if isinstance(b, Var):
        parents.append(b)
        slots.append(("b", b.value.shape))
    if not parents:
        return out

    def backward(g):
        grads = []
        for name, shape in slots:
            gg = da(g) if name == "a" else db(g)
            grads.append(_unbroadcast(gg, shape))
        return grads

    return Var(out, parents, backward, op)


def add(a, b):
    av, bv = value(a), value(b)
    return _binary(a, b, av + bv, lambda g: g, lambda g: g, "add")


def sub(a, b):
    av, bv = value(a), value(b)
    return _binary(a, b, av - bv, lambda g: g, lambda g: -g, "sub")


def mul(a, b):
    av, bv = value(a), value(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av, "mul")


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _binary(a, b, out, lambda g: g / bv, lambda g: -g * av / (bv * bv), "div")


def pow_const(a, exponent):
    if isinstance(exponent, Var):
        raise UnsupportedOpError("pow", "only constant exponents are supported")
    av = value(a)
    out = av ** exponent
    if not isinstance(a, Var):
        return out
    return Var(
        out, (a,),
        lambda g: [_unbroadcast(g * exponent * av ** (exponent - 1), av.shape)],
        "pow",
    )


def _unary(a, out, da, op):
    if not isinstance(a, Var):
        return out
    return Var(out, (a,), lambda g: [da(g)], op)


def sin(a):
    av = value(a)
    return _unary(a, np.sin(av), lambda g: g * np.cos(av), "sin")


def cos(a):
    av = value(a)
    return _unary(a, np.cos(av), lambda g: -g * np.sin(av), "cos")


def tan(a):
    av = value(a)
    c = np.cos(av)
    return _unary(a, np.tan(av), lambda g: g / (c * c), "tan")


def arctan(a):
    av = value(a)
    return _unary(a, np.arctan(av), lambda g: g / (1.0 + av * av), "arctan")


def arctan2(y, x):
    yv, xv = value(y), value(x)
    r2 = xv * xv + yv * yv
    return _binary(y, x, np.arctan2(yv, xv),
                   lambda g: g * xv / r2, lambda g: -g * yv / r2, "arctan2")


def sqrt(a):
    av = value(a)
    s = np.sqrt(av)
    return _unary(a, s, lambda g: g * 0.5 / s, "sqrt")


def exp(a):
    av = value(a)
    e = np.exp(av)
    return _unary(a, e, lambda g: g * e, "exp")


def log(a):
    av = value(a)
    return _unary(a, np.log(av), lambda g: g / av, "log")


def sigmoid(a):
    av = value(a)
    s = 1.0 / (1.0 + np.exp(-av))
    return _unary(a, s, lambda g: g * s * (1.0 - s), "sigmoid")


def absolute(a):
    # subgradient 0 at exactly 0
    av = value(a)
    sgn = np.sign(av)
    return _unary(a, np.abs(av), lambda g: g * sgn, "abs")


def asum(a, axis=None):
    av = value(a)
    out = np.sum(av, axis=axis)
    if not isinstance(a, Var):
        return out

    def backward(g):
        if axis is None:
            return [np.broadcast_to(g, av.shape).copy()]
        gg = np.expand_dims(g, axis)
        return [np.broadcast_to(gg, av.shape).copy()]

    return Var(out, (a,), backward, "sum")


def amean(a, axis=None):
    av = value(a)
    n = av.size if axis is None else av.shape[axis]
    return div(asum(a, axis=axis), float(n))


def reshape(a, shape):
    av = value(a)
    if not isinstance(a, Var):
        return av.reshape(shape)
    return Var(av.reshape(shape), (a,), lambda g: [g.reshape(av.shape)], "reshape")


def where(cond, a, b):
    """Select per element by a boolean array; cond itself is never differentiated."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    return _binary(a, b, out,
                   lambda g: np.where(cond, g, 0.0),
                   lambda g: np.where(cond, 0.0, g), "where")


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first argument."""
    return where(value(a) <= value(b), a, b)


def maximum(a, b):
    return where(value(a) >= value(b), a, b)


def take(a, idx):
    """Gather with an arbitrary numpy index; backward scatter-adds."""
    av = value(a)
    out = av[idx]
    if not isinstance(a, Var):
        return out

    def backward(g):
        acc = np.zeros_like(av)
        np.add.at(acc, idx, g)
        return [acc]

    return Var(out, (a,), backward, "take")


def stack(parts, axis=-1):
    vals = [value(p) for p in parts]
    out = np.stack(vals, axis=axis)
    parents = [p for p in parts if isinstance(p, Var)]
    if not parents:
        return out
    var_slots = [i for i, p in enumerate(parts) if isinstance(p, Var)]

    def backward(g):
        slices = np.moveaxis(g, axis, 0)
        return [slices[i].copy() for i in var_slots]

    return Var(out, parents, backward, "stack")


def backward(loss: Var) -> None:
    """Accumulate ``.grad`` on every Var reachable from the scalar ``loss``."""
    if not isinstance(loss, Var):
        raise TypeError("backward expects a Var")
    if loss.value.size != 1:
        raise ValueError("backward expects a scalar loss")

    nodes = []
    seen = set()
    stack_ = [loss]
    while stack_:
        node = stack_.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack_.extend(node._parents)

    for node in nodes:
        node.grad = None
    nodes.sort(key=lambda n: n._id, reverse=True)

    loss.grad = np.ones_like(loss.value)
    for node in nodes:
        if node.grad is None or node._backward is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            # grads are never mutated in place, so aliasing g is safe
            g = np.asarray(g, dtype=np.float64)
            parent.grad = g if parent.grad is None else parent.grad + g


@dataclass
class GradientVector:
    """Gradient of a scalar loss with respect to raw boundary parameters."""

    d_phi_raw_floor: np.ndarray
    d_phi_raw_ceil: np.ndarray

    def __post_init__(self):
        self.d_phi_raw_floor = np.asarray(self.d_phi_raw_floor, dtype=np.float64)
        self.d_phi_raw_ceil = np.asarray(self.d_phi_raw_ceil, dtype=np.float64)
        if self.d_phi_raw_floor.shape != self.d_phi_raw_ceil.shape:
            raise ValueError("floor/ceiling gradient lengths differ")
        if not (np.all(np.isfinite(self.d_phi_raw_floor))
                and np.all(np.isfinite(self.d_phi_raw_ceil))):
            raise ValueError("gradient contains non-finite entries")

    def as_flat(self) -> np.ndarray:
        return np.concatenate([self.d_phi_raw_floor, self.d_phi_raw_ceil])


def grad_of(loss_fn: Callable, params) -> tuple[float, GradientVector]:
    """Loss value and exact gradient w.r.t. a raw-boundary parameter table.

    ``loss_fn`` receives a copy of ``params`` whose ``phi_raw_floor`` and
    ``phi_raw_ceil`` fields are graph leaves and must return a scalar built
    from the differentiable library operations.
    """
    leaf_f = Var(np.asarray(params.phi_raw_floor, dtype=np.float64))
    leaf_c = Var(np.asarray(params.phi_raw_ceil, dtype=np.float64))
    loss = loss_fn(dataclasses.replace(params, phi_raw_floor=leaf_f, phi_raw_ceil=leaf_c))
    if not isinstance(loss, Var):
        # loss does not depend on the parameters at all
        return float(np.asarray(loss)), GradientVector(
            np.zeros_like(leaf_f.value), np.zeros_like(leaf_c.value))
    backward(loss)
    gf = leaf_f.grad if leaf_f.grad is not None else np.zeros_like(leaf_f.value)
    gc = leaf_c.grad if leaf_c.grad is not None else np.zeros_like(leaf_c.value)
    return float(loss.value), GradientVector(gf, gc)


@dataclass
class FdReport:
    """Outcome of a finite-difference gradient check."""

    max_rel_err: float
    fraction_passing: float
    n_checked: int
    n_skipped: int
    worst_coordinate: int = -1

    def passes(self, min_fraction: float = 0.95) -> bool:
        if self.n_checked == 0:
            return False
        return self.fraction_passing >= min_fraction


def fd_check(loss_fn: Callable, params, h: float = 1e-4,
             skip_predicate: Callable[[int], bool] | None = None,
             n_samples: int | None = None, rel_tol: float = 1e-3,
             rng: np.random.Generator | None = None) -> FdReport:
    """Compare :func:`grad_of` against central finite differences.

    Coordinates are indexed over the concatenated (floor, ceiling) vector.
    Besides the caller-supplied ``skip_predicate``, a coordinate is skipped
    when central differences at steps ``h`` and ``h/2`` disagree, which marks
    a kink (bilinear cell edge, segment boundary, nearest-neighbor or median
    tie) inside the stencil.
    """
    if h <= 0:
        raise ValueError("fd step h must be positive")
    x0 = np.concatenate([
        np.asarray(params.phi_raw_floor, dtype=np.float64),
        np.asarray(params.phi_raw_ceil, dtype=np.float64),
    ])
    n = x0.size
    w = n // 2

    def eval_at(x: np.ndarray) -> float:
        p = dataclasses.replace(params, phi_raw_floor=x[:w].copy(),
                                phi_raw_ceil=x[w:].copy())
        out = loss_fn(p)
        return float(out.value) if isinstance(out, Var) else float(out)

    _, grad = grad_of(loss_fn, params)
    analytic = grad.as_flat()

    if n_samples is None or n_samples >= n:
        coords = np.arange(n)
    else:
        gen = rng if rng is not None else np.random.default_rng(0)
        coords = gen.choice(n, size=n_samples, replace=False)
        coords.sort()

    max_rel = 0.0
    worst = -1
    n_pass = 0
    n_checked = 0
    n_skipped = 0
    for i in coords:
        if skip_predicate is not None and skip_predicate(int(i)):
            n_skipped += 1
            continue
        x = x0.copy()
        x[i] = x0[i] + h
        fp = eval_at(x)
        x[i] = x0[i] - h
        fm = eval_at(x)
        x[i] = x0[i] + 0.5 * h
        fp2 = eval_at(x)
        x[i] = x0[i] - 0.5 * h
        fm2 = eval_at(x)
        d1 = (fp - fm) / (2.0 * h)
        d2 = (fp2 - fm2) / h
        scale = max(abs(d1), abs(d2), 1e-8)
        if abs(d1 - d2) > 0.05 * scale:
            n_skipped += 1
            continue
        rel = abs(analytic[i] - d1) / max(abs(analytic[i]), abs(d1), 1e-8)
        n_checked += 1
        if rel < rel_tol:
            n_pass += 1
        if rel > max_rel:
            max_rel = rel
            worst = int(i)
    fraction = n_pass / n_checked if n_checked else 0.0
    return FdReport(max_rel, fraction, n_checked, n_skipped, worst)
