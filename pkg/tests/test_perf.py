import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from robmono.perf import (DomainError, SystemKind, SystemUtility, UserKind, UserUtility, f_eval,
                          g_eval, g_inverse, reduction_coefficients)

USER_KINDS = list(UserKind)
SYSTEM_KINDS = list(SystemKind)
mse = st.floats(1e-6, 1.0)


@pytest.mark.parametrize("kind", USER_KINDS)
def test_g_vanishes_at_one(kind):
    assert g_eval(UserUtility(kind), 1.0) == 0.0


def test_g_examples():
    assert g_eval(UserUtility("inverse-mse"), 0.5) == pytest.approx(1.0)
    assert g_eval(UserUtility("rate"), 0.25) == pytest.approx(2.0)
    assert g_eval(UserUtility("neg-mse"), 0.25) == pytest.approx(0.75)


@pytest.mark.parametrize("kind", USER_KINDS)
def test_g_domain_errors(kind):
    u = UserUtility(kind)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(DomainError):
            g_eval(u, bad)
    with pytest.raises(DomainError):
        g_inverse(u, -1.0)
    if math.isfinite(u.sup):
        with pytest.raises(DomainError):
            g_inverse(u, u.sup)


@pytest.mark.parametrize("kind", USER_KINDS)
def test_round_trip_on_log_grid(kind):
    u = UserUtility(kind)
    # 1 - x cannot carry 1e-12 relative precision for x much below 1e-4
    lowest = -4 if u.kind is UserKind.NEG_MSE else -8
    grid = np.logspace(lowest, 0, 400)
    back = g_inverse(u, g_eval(u, grid))
    np.testing.assert_allclose(back, grid, rtol=1e-12)


@pytest.mark.parametrize("kind", USER_KINDS)
@given(m1=mse, m2=mse)
def test_g_strictly_decreasing(kind, m1, m2):
    assume(m1 < m2 * (1 - 1e-9))
    u = UserUtility(kind)
    assert u(m1) > u(m2)


def test_f_examples():
    assert f_eval(SystemUtility("sum"), [1, 2, 3]) == 6
    assert f_eval(SystemUtility("max-min"), [1, 2, 3]) == 1
    assert f_eval(SystemUtility("prop-fair"), [1, 4]) == pytest.approx(2)
    assert f_eval(SystemUtility("harmonic"), [1, 1]) == pytest.approx(1)


def test_f_weights():
    assert f_eval(SystemUtility("sum", (2, 1)), [1, 3]) == 5
    assert f_eval(SystemUtility("max-min", (2, 1)), [1, 3]) == 2
    assert f_eval(SystemUtility("prop-fair", (1, 3)), [1, 16]) == pytest.approx(8)
    assert f_eval(SystemUtility("harmonic", (1, 1)), [1, 3]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        SystemUtility("sum", (1, -1))
    with pytest.raises(ValueError):
        f_eval(SystemUtility("sum", (1, 1)), [1, 2, 3])


@pytest.mark.parametrize("kind", ["prop-fair", "harmonic"])
def test_f_zero_coordinate(kind):
    assert f_eval(SystemUtility(kind), [0.0, 5.0]) == 0.0


vec = st.lists(st.floats(0, 10), min_size=2, max_size=4)


@pytest.mark.parametrize("kind", SYSTEM_KINDS)
@given(x=vec, d=st.lists(st.floats(0, 5), min_size=4, max_size=4))
def test_f_monotone(kind, x, d):
    x = np.array(x)
    y = x + np.array(d[:len(x)])
    f = SystemUtility(kind)
    assert f(x) <= f(y) + 1e-12


@pytest.mark.parametrize("kind", SYSTEM_KINDS)
@given(x=st.lists(st.floats(0.01, 10), min_size=2, max_size=4), step=st.floats(0.01, 5))
def test_f_strictly_increasing(kind, x, step):
    x = np.array(x)
    f = SystemUtility(kind)
    assert f(x) < f(x + step)


def test_reduction_example():
    nu, mu, a, b = reduction_coefficients(SystemUtility("sum"), [0, 0], [1, 1], 1.5, 2.0)
    np.testing.assert_allclose(nu, [0.5, 0.5])
    np.testing.assert_allclose(a, [0.5, 0.5])
    np.testing.assert_allclose(mu, [1, 1])
    np.testing.assert_allclose(b, [1, 1])


@pytest.mark.parametrize("kind", SYSTEM_KINDS)
def test_reduction_trivial_cases(kind):
    f = SystemUtility(kind)
    a, b = np.array([0.5, 1.0]), np.array([2.0, 3.0])
    nu, mu, a2, b2 = reduction_coefficients(f, a, b, f(a), f(b))
    np.testing.assert_allclose(nu, 1, atol=1e-9)
    np.testing.assert_allclose(mu, 1, atol=1e-9)
    np.testing.assert_allclose(a2, a, atol=1e-8)
    np.testing.assert_allclose(b2, b, atol=1e-8)


def test_reduction_f_min_at_upper_corner():
    f = SystemUtility("sum")
    nu, _, a2, _ = reduction_coefficients(f, [0, 0, 0], [1, 2, 3], 6.0, 6.0)
    np.testing.assert_array_equal(nu, 0)
    np.testing.assert_array_equal(a2, [1, 2, 3])


def test_reduction_contract():
    with pytest.raises(ValueError):
        reduction_coefficients(SystemUtility("sum"), [0, 0], [1, 1], 2.0, 1.0)


box = st.tuples(st.lists(st.floats(0, 3), min_size=2, max_size=3),
                st.lists(st.floats(0.01, 3), min_size=3, max_size=3),
                st.floats(0, 1), st.floats(0, 1))


@given(box, st.lists(st.floats(0.2, 3), min_size=3, max_size=3))
def test_sum_closed_form_matches_bisection(data, w):
    lo, width, s1, s2 = data
    a = np.array(lo)
    b = a + np.array(width[:len(a)])
    f = SystemUtility("sum", tuple(w[:len(a)]))
    fa, fb = f(a), f(b)
    f_min = fa + s1 * (fb - fa)
    beta = f_min + s2 * (fb - f_min)
    nu1, mu1, a1, b1 = reduction_coefficients(f, a, b, f_min, beta, closed_form=True)
    nu2, mu2, a2, b2 = reduction_coefficients(f, a, b, f_min, beta, closed_form=False)
    np.testing.assert_allclose(nu1, nu2, atol=1e-7)
    np.testing.assert_allclose(mu1, mu2, atol=1e-7)


@pytest.mark.parametrize("kind", SYSTEM_KINDS)
@given(data=box)
def test_reduction_keeps_candidate_points(kind, data):
    """Grid points of [a, b] with f_min <= f <= beta stay inside the reduced box."""
    lo, width, s1, s2 = data
    a = np.array(lo)
    b = a + np.array(width[:len(a)])
    f = SystemUtility(kind)
    fa, fb = f(a), f(b)
    f_min = fa + s1 * (fb - fa)
    beta = f_min + s2 * (fb - f_min)
    _, _, a2, b2 = reduction_coefficients(f, a, b, f_min, beta)
    assert np.all(a2 >= a - 1e-12) and np.all(b2 <= b + 1e-12) and np.all(a2 <= b2)
    axes = [np.linspace(a[i], b[i], 9) for i in range(len(a))]
    for x in np.array(np.meshgrid(*axes)).reshape(len(a), -1).T:
        v = f(x)
        if f_min <= v <= beta:
            assert np.all(x >= a2 - 1e-8) and np.all(x <= b2 + 1e-8)
