"""Interval arithmetic: exactness of the affine image, extended reals."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boundprop.errors import ShapeError
from boundprop.tensors import (
    BoundedTensor,
    as_tensor,
    interval_affine,
    interval_elementwise,
    interval_monotone_unary,
    make_bounded_tensor,
    point_box,
    pos_neg_split,
    posneg_bounds,
)

INF = np.inf


def test_make_bounded_tensor_validates():
    with pytest.raises(ShapeError):
        make_bounded_tensor([0.0, 1.0], [[1.0, 2.0]])
    with pytest.raises(ValueError, match="flat index 1"):
        make_bounded_tensor([0.0, 3.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="NaN"):
        make_bounded_tensor([0.0, np.nan], [1.0, 2.0])
    box = make_bounded_tensor([[0, 1]], [[2, 3]])
    assert box.shape == (1, 2) and box.size == 2
    assert box.flat().shape == (2,)


def test_box_helpers():
    box = make_bounded_tensor([-1.0, 0.0], [1.0, 2.0])
    assert box.contains([0.0, 1.0])
    assert not box.contains([0.0, 2.5])
    assert box.contains([0.0, 2.0 + 1e-12], tol=1e-9)
    np.testing.assert_array_equal(box.width(), [2.0, 2.0])
    other = make_bounded_tensor([-0.5, -1.0], [2.0, 1.0])
    both = box.intersect(other)
    np.testing.assert_array_equal(both.lower, [-0.5, 0.0])
    np.testing.assert_array_equal(both.upper, [1.0, 1.0])
    pb = point_box([3.0, 4.0])
    assert pb.lower is not pb.upper
    assert pb.width().max() == 0.0


small_floats = st.floats(min_value=-100, max_value=100, allow_nan=False, width=64)


@given(st.lists(small_floats, min_size=1, max_size=12))
def test_pos_neg_split_reconstructs(values):
    m = as_tensor(values)
    p, n = pos_neg_split(m)
    assert (p >= 0).all() and (n <= 0).all()
    np.testing.assert_array_equal(p + n, m)


@settings(deadline=None, max_examples=60)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_interval_affine_sound_and_exact(rows, cols, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((rows, cols))
    b = rng.standard_normal(rows)
    lo = rng.standard_normal(cols)
    hi = lo + rng.uniform(0, 2, cols)
    box = BoundedTensor(lo, hi)
    out = interval_affine(w, b, box)

    # soundness against sampled points
    xs = rng.uniform(lo, hi, size=(64, cols))
    ys = xs @ w.T + b
    assert (ys >= out.lower - 1e-9).all()
    assert (ys <= out.upper + 1e-9).all()

    # exactness: the extreme corner per row attains the bound
    x_min = np.where(w > 0, lo, hi)  # (rows, cols), per-row minimizing corner
    x_max = np.where(w > 0, hi, lo)
    attained_lo = np.einsum("rc,rc->r", w, x_min) + b
    attained_hi = np.einsum("rc,rc->r", w, x_max) + b
    np.testing.assert_allclose(out.lower, attained_lo, rtol=0, atol=1e-9)
    np.testing.assert_allclose(out.upper, attained_hi, rtol=0, atol=1e-9)


def test_interval_affine_shape_errors():
    box = BoundedTensor(np.zeros(3), np.ones(3))
    with pytest.raises(ShapeError):
        interval_affine(np.zeros((2, 4)), None, box)
    with pytest.raises(ShapeError):
        interval_affine(np.zeros((2, 3)), np.zeros(5), box)
    # scalar bias broadcasts
    out = interval_affine(np.eye(3), np.array([1.0]), box)
    np.testing.assert_array_equal(out.lower, [1.0, 1.0, 1.0])


def test_unbounded_inputs_zero_coefficient_does_not_leak():
    # a weight row that ignores the unbounded coordinate stays finite
    box = BoundedTensor(np.array([-1.0, -INF]), np.array([1.0, INF]))
    w = np.array([[2.0, 0.0], [1.0, 1.0]])
    out = interval_affine(w, None, box)
    np.testing.assert_array_equal(out.lower, [-2.0, -INF])
    np.testing.assert_array_equal(out.upper, [2.0, INF])


def test_half_bounded_box_keeps_one_side():
    box = BoundedTensor(np.array([0.0]), np.array([INF]))
    out = interval_affine(np.array([[3.0]]), np.array([1.0]), box)
    np.testing.assert_array_equal(out.lower, [1.0])
    np.testing.assert_array_equal(out.upper, [INF])
    out_neg = interval_affine(np.array([[-3.0]]), None, box)
    np.testing.assert_array_equal(out_neg.lower, [-INF])
    np.testing.assert_array_equal(out_neg.upper, [0.0])


def test_posneg_bounds_matches_direct_computation(rng):
    w = rng.standard_normal((4, 6))
    box = BoundedTensor(-rng.uniform(0.1, 1, 6), rng.uniform(0.1, 1, 6))
    wp, wn = pos_neg_split(w)
    out = posneg_bounds(wp, wn, box, bias_lower=1.5, bias_upper=-0.5)
    np.testing.assert_array_equal(out.lower, wp @ box.lower + wn @ box.upper + 1.5)
    np.testing.assert_array_equal(out.upper, wp @ box.upper + wn @ box.lower - 0.5)


def test_elementwise_add_sub_and_broadcast():
    a = BoundedTensor(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    b = BoundedTensor(np.array([-1.0, 0.5]), np.array([0.0, 1.0]))
    add = interval_elementwise("add", a, b)
    np.testing.assert_array_equal(add.lower, [-1.0, 1.5])
    np.testing.assert_array_equal(add.upper, [1.0, 3.0])
    sub = interval_elementwise("sub", a, b)
    np.testing.assert_array_equal(sub.lower, [0.0, 0.0])
    np.testing.assert_array_equal(sub.upper, [2.0, 1.5])
    # scalar operand broadcasts to the wider operand
    s = BoundedTensor(np.array([2.0]), np.array([3.0]))
    wide = interval_elementwise("sub", a, s)
    np.testing.assert_array_equal(wide.lower, [-3.0, -2.0])
    np.testing.assert_array_equal(wide.upper, [-1.0, 0.0])
    with pytest.raises(ShapeError):
        interval_elementwise("add", a, BoundedTensor(np.zeros(3), np.ones(3)))
    with pytest.raises(ValueError):
        interval_elementwise("mul", a, b)


def test_monotone_unary_relu_and_reshape():
    x = BoundedTensor(np.array([-2.0, -1.0, 1.0]), np.array([-1.0, 3.0, 2.0]))
    r = interval_monotone_unary("relu", x)
    np.testing.assert_array_equal(r.lower, [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(r.upper, [0.0, 3.0, 2.0])
    rs = interval_monotone_unary("reshape", x, {"shape": (3, 1)})
    assert rs.shape == (3, 1)
    with pytest.raises(ShapeError):
        interval_monotone_unary("reshape", x, {"shape": (2, 2)})
    with pytest.raises(ValueError):
        interval_monotone_unary("sigmoid", x)
