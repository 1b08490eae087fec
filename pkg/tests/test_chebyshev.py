import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpkan import eval_T, eval_basis_row, eval_dT
from cpkan.chebyshev import basis, basis_deriv
from cpkan.errors import InvalidInputError

unit = st.floats(-1.0, 1.0, allow_nan=False)


def trig(n, x):
    return math.cos(n * math.acos(x))


def test_low_orders():
    assert eval_T(0, 0.7) == 1.0
    assert eval_T(1, -0.3) == -0.3
    assert eval_T(3, 0.5) == pytest.approx(-1.0, abs=1e-15)


def test_t5_against_closed_forms():
    # 16x^5 - 20x^3 + 5x at 0.3, worked by hand: 0.03888 - 0.54 + 1.5
    assert eval_T(5, 0.3) == pytest.approx(0.99888, abs=1e-14)
    assert abs(eval_T(5, 0.3) - trig(5, 0.3)) <= 1e-12


def test_basis_row_values():
    assert eval_basis_row(2, 0.5).tolist() == [1.0, 0.5, -0.5]
    assert eval_basis_row(0, -0.9).tolist() == [1.0]
    # T_0..T_4 at 0.1 by hand: 1, .1, -.98, -.296, .9208
    np.testing.assert_allclose(eval_basis_row(4, 0.1), [1.0, 0.1, -0.98, -0.296, 0.9208], atol=1e-15)
    np.testing.assert_allclose(eval_basis_row(4, 0.1), [trig(k, 0.1) for k in range(5)], atol=1e-12)


def test_derivative_examples():
    assert eval_dT(0, 0.3) == 0.0
    assert eval_dT(1, -0.8) == 1.0
    h = 1e-6
    fd = (eval_T(4, 0.2 + h) - eval_T(4, 0.2 - h)) / (2 * h)
    assert eval_dT(4, 0.2) == pytest.approx(fd, rel=1e-6)
    # T_4' = 32x^3 - 16x
    assert eval_dT(4, 0.2) == pytest.approx(32 * 0.008 - 3.2, abs=1e-14)


@pytest.mark.parametrize("fn", [eval_T, eval_basis_row, eval_dT])
@pytest.mark.parametrize("x", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(fn, x):
    with pytest.raises(InvalidInputError):
        fn(2, x)


def test_negative_degree_rejected():
    with pytest.raises(InvalidInputError):
        eval_T(-1, 0.0)
    with pytest.raises(InvalidInputError):
        basis(np.zeros(3), -1)


def test_polynomials_defined_outside_unit_interval():
    assert eval_T(2, 3.0) == 17.0
    assert eval_T(3, -2.0) == -26.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 12), unit)
def test_trig_identity_and_bound(n, x):
    v = eval_T(n, x)
    assert abs(v - trig(n, x)) <= 1e-9
    assert abs(v) <= 1 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 15), st.floats(-3, 3, allow_nan=False))
def test_row_is_bit_identical_to_scalar(d, x):
    row = eval_basis_row(d, x)
    assert row[0] == 1.0
    assert all(row[k] == eval_T(k, x) for k in range(d + 1))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10), st.floats(-0.99, 0.99))
def test_derivative_matches_central_difference(n, x):
    h = 1e-6
    fd = (eval_T(n, x + h) - eval_T(n, x - h)) / (2 * h)
    exact = eval_dT(n, x)
    assert abs(exact - fd) <= 1e-6 * max(1.0, abs(exact))


def test_vectorised_basis_matches_scalar():
    x = np.random.default_rng(0).uniform(-1, 1, size=(7, 3))
    B = basis(x, 6)
    dB = basis_deriv(x, 6)
    assert B.shape == (7, 3, 7)
    for idx in np.ndindex(x.shape):
        assert B[idx].tolist() == eval_basis_row(6, x[idx]).tolist()
        np.testing.assert_allclose(dB[idx], [eval_dT(k, x[idx]) for k in range(7)], rtol=1e-14, atol=1e-14)


def test_degree_zero_derivative_is_zero():
    assert basis_deriv(np.array([0.1, 0.5]), 0).tolist() == [[0.0], [0.0]]
