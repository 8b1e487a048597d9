"""Minimal reverse-mode differentiation over the array ops used by the
CROWN backward pass.

A Tape owns one analysis pass: values created on it carry provenance so a
scalar objective can be differentiated with respect to gradient-enabled
leaves (the relaxation slopes).  Forward numerics are exactly the same
numpy expressions used by the interval ops, so taped and untaped runs are
bit-identical.  Subgradient convention at kinks: the flat branch
(derivative 0), so pos/neg splits use strict sign masks.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensors import as_tensor

TAPE_OPS = (
    "matmul", "add", "sub", "scale", "elementwise_mul", "pos_neg_split",
    "sum", "min_with_const", "max_with_const", "select_by_mask",
)


class TapeValue:
    """Array value with provenance on a tape.

    Leaves are created by Tape.leaf/Tape.parameter; everything else is the
    result of a recorded op with parent references and a pullback rule.
    """

    __slots__ = ("value", "tape", "requires_grad", "parents", "pullback")

    # keep numpy from absorbing us in mixed expressions; our dunders handle it
    __array_ufunc__ = None

    def __init__(self, value, tape, requires_grad=False, parents=(), pullback=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.parents = parents
        self.pullback = pullback

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        kind = "param" if self.requires_grad else ("leaf" if not self.parents else "op")
        return f"TapeValue({kind}, shape={self.value.shape})"

    # operator sugar so backward-pass code reads like plain numpy
    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.elementwise_mul(self, other)

    def __rmul__(self, other):
        return self.tape.elementwise_mul(other, self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __neg__(self):
        return self.tape.scale(self, -1.0)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` (undo exact/scalar/row broadcasts)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of operations for one analysis pass.

    With grad_enabled=False the same ops run forward-only (no provenance),
    which is how plain CROWN passes execute.
    """

    def __init__(self, grad_enabled: bool = True):
        self.grad_enabled = grad_enabled
        self.nodes: list[TapeValue] = []
        self.params: list[TapeValue] = []

    def clear(self) -> None:
        self.nodes.clear()
        self.params.clear()

    # ---- value creation -------------------------------------------------

    def leaf(self, value, requires_grad: bool = False) -> TapeValue:
        v = TapeValue(as_tensor(value), self, requires_grad=requires_grad and self.grad_enabled)
        if v.requires_grad:
            self.params.append(v)
        return v

    def parameter(self, value) -> TapeValue:
        return self.leaf(value, requires_grad=True)

    def _lift(self, x) -> TapeValue:
        if isinstance(x, TapeValue):
            if x.tape is not self:
                raise ValueError("TapeValue used on a different tape")
            return x
        return TapeValue(as_tensor(x), self)

    def _emit(self, value, parents, pullback) -> TapeValue:
        if not self.grad_enabled:
            return TapeValue(value, self)
        out = TapeValue(value, self, parents=tuple(parents), pullback=pullback)
        self.nodes.append(out)
        return out

    # ---- recorded operations --------------------------------------------

    def matmul(self, a, b) -> TapeValue:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        try:
            value = av @ bv
        except ValueError as e:
            raise ShapeError(f"matmul {av.shape} @ {bv.shape}: {e}") from None

        def pull(g):
            if av.ndim == 1 and bv.ndim == 1:  # inner product
                return g * bv, g * av
            if bv.ndim == 1:  # (s,n) @ (n,) -> (s,)
                return np.outer(g, bv), av.T @ g
            if av.ndim == 1:  # (n,) @ (n,m) -> (m,)
                return g @ bv.T, np.outer(av, g)
            return g @ bv.T, av.T @ g

        return self._emit(value, (a, b), pull)

    def add(self, a, b) -> TapeValue:
        a, b = self._lift(a), self._lift(b)
        value = a.value + b.value
        sa, sb = a.value.shape, b.value.shape
        return self._emit(value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b) -> TapeValue:
        a, b = self._lift(a), self._lift(b)
        value = a.value - b.value
        sa, sb = a.value.shape, b.value.shape
        return self._emit(value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def scale(self, a, k: float) -> TapeValue:
        a = self._lift(a)
        k = float(k)
        return self._emit(a.value * k, (a,), lambda g: (g * k,))

    def elementwise_mul(self, a, b) -> TapeValue:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        value = av * bv
        sa, sb = av.shape, bv.shape
        return self._emit(
            value, (a, b),
            lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)),
        )

    def max_with_const(self, a, c: float) -> TapeValue:
        a = self._lift(a)
        mask = a.value > c  # strict: at the kink take the flat branch
        return self._emit(np.maximum(a.value, c), (a,), lambda g: (g * mask,))

    def min_with_const(self, a, c: float) -> TapeValue:
        a = self._lift(a)
        mask = a.value < c
        return self._emit(np.minimum(a.value, c), (a,), lambda g: (g * mask,))

    def pos_neg_split(self, a) -> tuple[TapeValue, TapeValue]:
        return self.max_with_const(a, 0.0), self.min_with_const(a, 0.0)

    def sum(self, a) -> TapeValue:
        a = self._lift(a)
        shape = a.value.shape
        value = np.asarray(np.sum(a.value))
        return self._emit(value, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))

    def select_by_mask(self, mask, compact, base) -> TapeValue:
        """Scatter ``compact`` into the True positions of ``mask`` over ``base``."""
        compact, base = self._lift(compact), self._lift(base)
        mask = np.asarray(mask, dtype=bool)
        if compact.value.shape != (int(mask.sum()),):
            raise ShapeError(
                f"compact values {compact.value.shape} do not fit mask with {int(mask.sum())} slots"
            )
        if base.value.shape != mask.shape:
            raise ShapeError(f"base {base.value.shape} does not match mask {mask.shape}")
        value = base.value.copy()
        value[mask] = compact.value

        def pull(g):
            return g[mask], np.where(mask, 0.0, g)

        return self._emit(value, (compact, base), pull)

    def record(self, op: str, *inputs) -> TapeValue | tuple[TapeValue, TapeValue]:
        """Generic dispatcher over the supported op names."""
        if op not in TAPE_OPS:
            raise ValueError(f"unknown tape op: {op}")
        return getattr(self, op)(*inputs)

    # ---- reverse pass ----------------------------------------------------

    def backward(self, objective: TapeValue) -> dict[TapeValue, np.ndarray]:
        """Gradients of a scalar objective for every gradient-enabled leaf.

        Leaves the objective does not reach get zeros.
        """
        if not isinstance(objective, TapeValue) or objective.tape is not self:
            raise ValueError("objective must live on this tape")
        if objective.value.size != 1:
            raise ValueError(f"objective must be scalar, got shape {objective.value.shape}")
        grads: dict[int, np.ndarray] = {id(objective): np.ones_like(objective.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node.pullback is None:
                continue
            for parent, pg in zip(node.parents, node.pullback(g)):
                if parent.pullback is None and not parent.requires_grad:
                    continue  # constant leaf, gradient not needed
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        return {p: grads.get(id(p), np.zeros_like(p.value)) for p in self.params}


def tape_record(tape: Tape, op: str, *inputs):
    return tape.record(op, *inputs)


def tape_backward(objective: TapeValue) -> dict[TapeValue, np.ndarray]:
    return objective.tape.backward(objective)


def finite_difference_check(f, params, eps: float) -> float:
    """Max relative error between the tape gradient of f and central
    finite differences, coordinate by coordinate.

    ``f`` takes a TapeValue (use its ``.tape`` for ops) and returns a
    scalar TapeValue.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = as_tensor(params)

    tape = Tape(grad_enabled=True)
    p = tape.parameter(params)
    grad = tape.backward(f(p))[p]

    def eval_plain(values) -> float:
        t = Tape(grad_enabled=False)
        return float(f(t.leaf(values)).value)

    worst = 0.0
    flat_grad = grad.reshape(-1)
    for i in range(params.size):
        bump = np.zeros_like(params).reshape(-1)
        bump[i] = eps
        bump = bump.reshape(params.shape)
        central = (eval_plain(params + bump) - eval_plain(params - bump)) / (2.0 * eps)
        rel = abs(central - flat_grad[i]) / (abs(flat_grad[i]) + 1e-12)
        worst = max(worst, rel)
    return worst
