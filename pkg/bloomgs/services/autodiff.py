"""
Autodiff Engine
Reverse-mode differentiation over numpy arrays on an append-only tape

Every operation records its value, its parents and a vector-Jacobian
product closure. backward() walks the tape once in reverse index order,
so gradient accumulation order is fixed and runs are bit-reproducible.
"""

from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import special

from bloomgs.errors import InvalidArgumentError
from bloomgs.models import GradCheckReport

ArrayLike = Union[np.ndarray, float, int]
Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Var:
    """A node on a tape: a float64 array plus how to push gradients to its parents."""

    __array_ufunc__ = None

    def __init__(self, tape: "Tape", value: np.ndarray, parents: Sequence["Var"] = (),
                 vjp: Optional[Vjp] = None, name: Optional[str] = None, requires_grad: bool = False):
        self.tape = tape
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.name = name
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Var{label}(shape={self.shape})"

    def item(self) -> float:
        return float(self.value)

    # Operators
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, key): return getitem(self, key)

    @property
    def T(self) -> "Var":
        return swapaxes(self, -1, -2)


class Tape:
    """Append-only record of operations; indices only point backwards."""

    def __init__(self):
        self.nodes: List[Var] = []
        self.leaves: Dict[str, Var] = {}

    def _append(self, var: Var) -> Var:
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    def leaf(self, value: ArrayLike, name: str) -> Var:
        """A differentiable input, reported by name in backward()."""
        if name in self.leaves:
            raise InvalidArgumentError(f"duplicate leaf name: {name}")
        var = self._append(Var(self, np.array(value, dtype=np.float64), name=name, requires_grad=True))
        self.leaves[name] = var
        return var

    def constant(self, value: ArrayLike) -> Var:
        return Var(self, value)

    def record(self, value: np.ndarray, parents: Sequence[Var], vjp: Vjp) -> Var:
        """Register a new op; vjp maps the output gradient to one gradient per parent."""
        needs = any(p.requires_grad for p in parents)
        var = Var(self, value, parents, vjp if needs else None, requires_grad=needs)
        return self._append(var) if needs else var


def tape_of(*items) -> Tape:
    for item in items:
        if isinstance(item, Var):
            return item.tape
    raise InvalidArgumentError("operation needs at least one Var operand")


def lift(x, tape: Optional[Tape] = None) -> Var:
    if isinstance(x, Var):
        return x
    return Var(tape, x)


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(a, b, value_fn, grad_a, grad_b) -> Var:
    tape = tape_of(a, b)
    a, b = lift(a, tape), lift(b, tape)
    out = value_fn(a.value, b.value)

    def vjp(g):
        return (unbroadcast(grad_a(g, a.value, b.value, out), a.shape) if a.requires_grad else None,
                unbroadcast(grad_b(g, a.value, b.value, out), b.shape) if b.requires_grad else None)

    return tape.record(out, (a, b), vjp)


def _unary(x: Var, value: np.ndarray, local: Callable[[np.ndarray], np.ndarray]) -> Var:
    return x.tape.record(value, (x,), lambda g: (local(g),))


# ==================== Elementwise ====================

def add(a, b) -> Var:
    return _binary(a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> Var:
    return _binary(a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> Var:
    return _binary(a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> Var:
    return _binary(a, b, np.divide, lambda g, x, y, o: g / y, lambda g, x, y, o: -g * o / y)


def neg(x: Var) -> Var:
    return _unary(x, -x.value, lambda g: -g)


def power(x: Var, exponent: float) -> Var:
    value = x.value ** exponent
    return _unary(x, value, lambda g: g * exponent * x.value ** (exponent - 1))


def square(x: Var) -> Var:
    return _unary(x, x.value * x.value, lambda g: 2.0 * g * x.value)


def sqrt(x: Var) -> Var:
    value = np.sqrt(x.value)
    return _unary(x, value, lambda g: 0.5 * g / value)


def exp(x: Var) -> Var:
    value = np.exp(x.value)
    return _unary(x, value, lambda g: g * value)


def log(x: Var) -> Var:
    return _unary(x, np.log(x.value), lambda g: g / x.value)


def log2(x: Var) -> Var:
    return _unary(x, np.log2(x.value), lambda g: g / (x.value * np.log(2.0)))


def tanh(x: Var) -> Var:
    value = np.tanh(x.value)
    return _unary(x, value, lambda g: g * (1.0 - value * value))


def sigmoid(x: Var) -> Var:
    value = special.expit(x.value)
    return _unary(x, value, lambda g: g * value * (1.0 - value))


def softplus(x: Var) -> Var:
    value = np.logaddexp(0.0, x.value)
    return _unary(x, value, lambda g: g * special.expit(x.value))


def absolute(x: Var) -> Var:
    return _unary(x, np.abs(x.value), lambda g: g * np.sign(x.value))


def erf(x: Var) -> Var:
    return _unary(x, special.erf(x.value),
                  lambda g: g * (2.0 / np.sqrt(np.pi)) * np.exp(-x.value * x.value))


def ndtr(x: Var) -> Var:
    """Standard normal CDF (scipy.special.ndtr, double precision)."""
    return _unary(x, special.ndtr(x.value),
                  lambda g: g * np.exp(-0.5 * x.value * x.value) / np.sqrt(2.0 * np.pi))


def maximum(x: Var, floor: float) -> Var:
    """max(x, floor) with a constant floor; gradient passes only where x > floor."""
    keep = x.value > floor
    return _unary(x, np.where(keep, x.value, floor), lambda g: g * keep)


def minimum(x: Var, ceiling: float) -> Var:
    keep = x.value < ceiling
    return _unary(x, np.where(keep, x.value, ceiling), lambda g: g * keep)


def where(condition: np.ndarray, a, b) -> Var:
    """Select with a constant boolean condition."""
    condition = np.asarray(condition, dtype=bool)
    return _binary(a, b, lambda x, y: np.where(condition, x, y),
                   lambda g, x, y, o: np.where(condition, g, 0.0),
                   lambda g, x, y, o: np.where(condition, 0.0, g))


# ==================== Reductions and shape ====================

def sum(x: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    value = x.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return x.tape.record(value, (x,), vjp)


def mean(x: Var, axis=None, keepdims: bool = False) -> Var:
    count = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def prod_last(x: Var) -> Var:
    """Product over the last axis (entries assumed non-zero)."""
    value = x.value.prod(axis=-1)
    return _unary(x, value, lambda g: g[..., None] * value[..., None] / x.value)


def reshape(x: Var, shape) -> Var:
    return _unary(x, x.value.reshape(shape), lambda g: g.reshape(x.shape))


def swapaxes(x: Var, a: int, b: int) -> Var:
    return _unary(x, np.swapaxes(x.value, a, b), lambda g: np.swapaxes(g, a, b))


def getitem(x: Var, key) -> Var:
    def vjp(g):
        full = np.zeros(x.shape)
        np.add.at(full, key, g)
        return (full,)

    return x.tape.record(x.value[key], (x,), vjp)


def take(x: Var, indices: np.ndarray, axis: int = 0) -> Var:
    """Gather along an axis; repeated indices accumulate gradient."""
    indices = np.asarray(indices)

    def vjp(g):
        full = np.zeros(x.shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return x.tape.record(np.take(x.value, indices, axis=axis), (x,), vjp)


def concat(items: Sequence, axis: int = 0) -> Var:
    tape = tape_of(*items)
    items = [lift(i, tape) for i in items]
    sizes = [i.shape[axis] for i in items]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape.record(np.concatenate([i.value for i in items], axis=axis), items, vjp)


def stack(items: Sequence, axis: int = 0) -> Var:
    tape = tape_of(*items)
    items = [lift(i, tape) for i in items]

    def vjp(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(items)))

    return tape.record(np.stack([i.value for i in items], axis=axis), items, vjp)


def matmul(a, b) -> Var:
    """Batched matrix product with numpy broadcasting over leading axes."""
    tape = tape_of(a, b)
    a, b = lift(a, tape), lift(b, tape)
    out = np.matmul(a.value, b.value)

    def vjp(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return tape.record(out, (a, b), vjp)


# ==================== Backward ====================

def backward(output: Var) -> Dict[str, np.ndarray]:
    """Gradients of a scalar output for every named leaf on its tape."""
    if output.value.size != 1:
        raise InvalidArgumentError(f"backward needs a scalar output, got shape {output.shape}")

    tape = output.tape
    grads: Dict[int, np.ndarray] = {}
    if output.requires_grad:
        grads[output.index] = np.ones_like(output.value)

        for node in reversed(tape.nodes[: output.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            if node.vjp is None:
                grads[node.index] = g
                node.grad = g
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = np.asarray(pg, dtype=np.float64)

    result = {}
    for name, leaf in tape.leaves.items():
        leaf.grad = grads.get(leaf.index, np.zeros_like(leaf.value))
        result[name] = leaf.grad
    return result


# ==================== Gradient check ====================

ScalarFn = Callable[[Tape, Dict[str, Var]], Var]


def evaluate(fn: ScalarFn, point: Dict[str, np.ndarray]) -> float:
    tape = Tape()
    params = {name: tape.leaf(value, name) for name, value in point.items()}
    return float(fn(tape, params).value)


def grad_check(
    fn: ScalarFn,
    point: Dict[str, np.ndarray],
    tolerance: float = 1e-4,
    max_coordinates: int = 32,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients against central differences at sampled coordinates.

    fn must be deterministic: freeze noise and quantization before calling.
    """
    point = {name: np.array(value, dtype=np.float64) for name, value in point.items()}
    tape = Tape()
    params = {name: tape.leaf(value, name) for name, value in point.items()}
    analytic = backward(fn(tape, params))

    picker = np.random.default_rng(seed)
    per_parameter: Dict[str, float] = {}
    checked = 0
    for name, value in point.items():
        flat_count = value.size
        coords = np.arange(flat_count)
        if flat_count > max_coordinates:
            coords = np.sort(picker.choice(flat_count, size=max_coordinates, replace=False))

        worst = 0.0
        for flat in coords:
            idx = np.unravel_index(flat, value.shape)
            h = 1e-5 * max(1.0, abs(value[idx]))
            plus = {k: v.copy() for k, v in point.items()}
            minus = {k: v.copy() for k, v in point.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            numeric = (evaluate(fn, plus) - evaluate(fn, minus)) / (2.0 * h)
            exact = float(analytic[name][idx])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-6)
            worst = max(worst, error)
            checked += 1
        per_parameter[name] = worst

    max_error = max(per_parameter.values(), default=0.0)
    return GradCheckReport(
        max_relative_error=max_error,
        tolerance=tolerance,
        passed=max_error < tolerance,
        per_parameter=per_parameter,
        coordinates_checked=checked,
    )
