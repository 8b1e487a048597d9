"""Dense float64 value arrays and interval (box) arithmetic.

All bound computations in the package run on numpy float64 arrays in
C (row-major) order.  Boxes are pairs of elementwise lower/upper arrays;
+-inf entries are legal and follow the convention that a zero coefficient
never depends on an unbounded input (0 * inf == 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray


def as_tensor(values) -> Tensor:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


@dataclass(frozen=True)
class BoundedTensor:
    """Paired elementwise lower/upper value arrays of identical shape."""

    lower: Tensor
    upper: Tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.lower.shape

    @property
    def size(self) -> int:
        return self.lower.size

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.lower).all() and np.isfinite(self.upper).all())

    def width(self) -> Tensor:
        return self.upper - self.lower

    def reshape(self, shape) -> "BoundedTensor":
        return BoundedTensor(self.lower.reshape(shape), self.upper.reshape(shape))

    def flat(self) -> "BoundedTensor":
        return BoundedTensor(self.lower.reshape(-1), self.upper.reshape(-1))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(self.lower - tol <= x) and np.all(x <= self.upper + tol))

    def intersect(self, other: "BoundedTensor") -> "BoundedTensor":
        """Elementwise intersection; both inputs must be sound for this to be."""
        if self.shape != other.shape:
            raise ShapeError(f"cannot intersect boxes of shapes {self.shape} and {other.shape}")
        return BoundedTensor(
            np.maximum(self.lower, other.lower), np.minimum(self.upper, other.upper)
        )


def make_bounded_tensor(lower, upper) -> BoundedTensor:
    """Validated box constructor: equal shapes and lower <= upper everywhere."""
    lo = as_tensor(lower)
    hi = as_tensor(upper)
    if lo.shape != hi.shape:
        raise ShapeError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
        raise ValueError("bounds must not contain NaN")
    bad = lo > hi
    if np.any(bad):
        idx = int(np.argmax(bad.reshape(-1)))
        raise ValueError(f"lower > upper at flat index {idx}")
    return BoundedTensor(lo, hi)


def point_box(values) -> BoundedTensor:
    """Degenerate box [v, v] around a concrete tensor."""
    v = as_tensor(values)
    return BoundedTensor(v, v.copy())


def pos_neg_split(m: Tensor) -> tuple[Tensor, Tensor]:
    """Split into nonnegative and nonpositive parts with M+ + M- == M."""
    m = np.asarray(m, dtype=np.float64)
    return np.maximum(m, 0.0), np.minimum(m, 0.0)


def _ext_matvec(w_pos: Tensor, w_neg: Tensor, a: Tensor, b: Tensor, side: str) -> Tensor:
    """w_pos @ a + w_neg @ b on extended reals with 0 * inf == 0.

    ``side`` names the bound being computed; an ill-posed inf - inf row is
    resolved conservatively (-inf for a lower bound, +inf for an upper one).
    """
    a_fin = np.where(np.isfinite(a), a, 0.0)
    b_fin = np.where(np.isfinite(b), b, 0.0)
    out = w_pos @ a_fin + w_neg @ b_fin
    to_minus = ((w_pos > 0) & (a == -np.inf)) | ((w_neg < 0) & (b == np.inf))
    to_plus = ((w_pos > 0) & (a == np.inf)) | ((w_neg < 0) & (b == -np.inf))
    minus = to_minus.any(axis=-1)
    plus = to_plus.any(axis=-1)
    out = np.where(plus, np.inf, out)
    out = np.where(minus, -np.inf, out)  # mixed rows resolve toward -inf ...
    if side == "upper":  # ... unless an upper bound is wanted
        out = np.where(plus, np.inf, out)
    return out


def posneg_bounds(w_pos: Tensor, w_neg: Tensor, box: BoundedTensor,
                  bias_lower=0.0, bias_upper=0.0) -> BoundedTensor:
    """Concretize a coefficient split against a box:

    lower = W+ @ l + W- @ u + bias_lower
    upper = W+ @ u + W- @ l + bias_upper
    """
    lo = box.lower.reshape(-1)
    hi = box.upper.reshape(-1)
    if box.is_finite():
        lower = w_pos @ lo + w_neg @ hi + bias_lower
        upper = w_pos @ hi + w_neg @ lo + bias_upper
    else:
        lower = _ext_matvec(w_pos, w_neg, lo, hi, "lower") + bias_lower
        upper = _ext_matvec(w_pos, w_neg, hi, lo, "upper") + bias_upper
    return BoundedTensor(lower, upper)


def interval_affine(w: Tensor, bias, x: BoundedTensor) -> BoundedTensor:
    """Exact image box of x -> W @ x + bias over the input box."""
    w = as_tensor(w)
    lo = x.lower.reshape(-1)
    if w.ndim != 2 or w.shape[1] != lo.size:
        raise ShapeError(f"weight {w.shape} does not match input of size {lo.size}")
    bias_arr = np.zeros(w.shape[0]) if bias is None else as_tensor(bias).reshape(-1)
    if bias_arr.size == 1 and w.shape[0] != 1:
        bias_arr = np.full(w.shape[0], bias_arr[0])
    if bias_arr.size != w.shape[0]:
        raise ShapeError(f"bias of size {bias_arr.size} does not match {w.shape[0]} rows")
    w_pos, w_neg = pos_neg_split(w)
    out = posneg_bounds(w_pos, w_neg, x.flat())
    return BoundedTensor(out.lower + bias_arr, out.upper + bias_arr)


def _broadcast_pair(a_lo, a_hi, b_lo, b_hi):
    """Exact-match or scalar broadcast only; anything else is rejected."""
    if a_lo.shape == b_lo.shape:
        return a_lo, a_hi, b_lo, b_hi
    if b_lo.size == 1:
        return a_lo, a_hi, np.full_like(a_lo, b_lo.reshape(())), np.full_like(a_hi, b_hi.reshape(()))
    if a_lo.size == 1:
        return (np.full_like(b_lo, a_lo.reshape(())), np.full_like(b_hi, a_hi.reshape(())),
                b_lo, b_hi)
    raise ShapeError(f"incompatible shapes {a_lo.shape} and {b_lo.shape}")


def interval_elementwise(kind: str, a: BoundedTensor, b) -> BoundedTensor:
    """Interval add/sub; a constant second operand is a degenerate box."""
    if not isinstance(b, BoundedTensor):
        b = point_box(b)
    a_lo, a_hi, b_lo, b_hi = _broadcast_pair(a.lower, a.upper, b.lower, b.upper)
    if kind == "add":
        return BoundedTensor(a_lo + b_lo, a_hi + b_hi)
    if kind == "sub":
        return BoundedTensor(a_lo - b_hi, a_hi - b_lo)
    raise ValueError(f"unknown elementwise kind: {kind}")


def interval_monotone_unary(kind: str, x: BoundedTensor, attrs: dict | None = None) -> BoundedTensor:
    """relu clamps both ends at zero; reshape/flatten relabel the shape."""
    attrs = attrs or {}
    if kind == "relu":
        return BoundedTensor(np.maximum(x.lower, 0.0), np.maximum(x.upper, 0.0))
    if kind in ("reshape", "flatten"):
        target = tuple(attrs["shape"])
        if int(np.prod(target)) != x.size:
            raise ShapeError(f"cannot reshape box of size {x.size} to {target}")
        return x.reshape(target)
    raise ValueError(f"unknown unary kind: {kind}")
