import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from tpmkit.numerics import (
    IntegrationError, Tolerance, exp_integral_e1, exp_integral_e1_scaled, integrate_adaptive,
)


def test_e1_reference_values():
    assert exp_integral_e1(1.0) == pytest.approx(0.2193839, abs=1e-6)
    assert exp_integral_e1(10.0) == pytest.approx(4.15697e-6, abs=1e-10)


@pytest.mark.parametrize("x", np.logspace(-6, math.log10(690.0), 80))
def test_e1_matches_scipy(x):
    assert exp_integral_e1(x) == pytest.approx(special.exp1(x), rel=1e-12, abs=0)


@pytest.mark.parametrize("x", [0.01, 0.9, 1.0, 5.0, 50.0, 699.0, 700.0, 701.0, 1e3, 1e5])
def test_e1_scaled_matches_mpmath(x):
    ref = float(mpmath.e1(x) * mpmath.exp(x))
    assert exp_integral_e1_scaled(x) == pytest.approx(ref, rel=1e-12)


def test_e1_asymptotic_branch_underflows_gracefully():
    assert exp_integral_e1(800.0) == 0.0
    assert exp_integral_e1_scaled(800.0) == pytest.approx(1 / 800 * (1 - 1 / 800 + 2 / 800**2), rel=2e-8)


def test_e1_monotone_decreasing_to_zero():
    xs = np.logspace(-3, 2.5, 200)
    vals = [exp_integral_e1(x) for x in xs]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-130


@pytest.mark.parametrize("x", [0.5, 1.0, 5.0])
def test_e1_derivative(x):
    h = 1e-5
    fd = (exp_integral_e1(x + h) - exp_integral_e1(x - h)) / (2 * h)
    assert fd == pytest.approx(-math.exp(-x) / x, rel=1e-5)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_e1_domain(bad):
    with pytest.raises(ValueError):
        exp_integral_e1(bad)
    with pytest.raises(ValueError):
        exp_integral_e1_scaled(bad)


def test_tolerance_validation():
    with pytest.raises(ValueError):
        Tolerance(abs=0.0)
    with pytest.raises(ValueError):
        Tolerance(rel=-1.0)
    with pytest.raises(ValueError):
        Tolerance(max_subdivisions=0)


def test_integrate_examples():
    assert integrate_adaptive(lambda t: 1.0, 0.0, 1.0) == pytest.approx(1.0, abs=1e-14)
    assert integrate_adaptive(lambda t: math.exp(-t), 0.0, math.inf) == pytest.approx(1.0, abs=1e-10)
    val = integrate_adaptive(lambda t: 2 * math.exp(-2 * t) * t, 0.0, math.inf,
                             tail=lambda T: math.exp(-2 * T) * (T + 0.5))
    assert val == pytest.approx(0.5, abs=1e-11)


def test_integrate_reversed_and_error_estimate():
    val, err = integrate_adaptive(math.sin, math.pi, 0.0, return_error=True)
    assert val == pytest.approx(-2.0, abs=1e-12)
    assert 0 <= err < 1e-10


def test_integrate_vectorized_agrees():
    f = lambda x: np.exp(-x * x)
    a = integrate_adaptive(f, -3.0, 2.0, vectorized=True)
    b = integrate_adaptive(lambda x: math.exp(-x * x), -3.0, 2.0)
    assert a == pytest.approx(b, abs=1e-14)


def test_integrate_reports_non_convergence():
    tol = Tolerance(abs=1e-14, rel=1e-14, max_subdivisions=3)
    with pytest.raises(IntegrationError) as info:
        integrate_adaptive(lambda x: math.sin(1.0 / x) if x else 0.0, 1e-4, 1.0, tol)
    assert math.isfinite(info.value.estimate)
    assert info.value.error > 0


def test_integrate_rejects_non_finite_integrand():
    with pytest.raises(IntegrationError):
        integrate_adaptive(lambda x: math.inf, 0.0, 1.0)


def test_integrate_rejects_nan_bounds():
    with pytest.raises(ValueError):
        integrate_adaptive(lambda x: 1.0, math.nan, 1.0)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=1, max_size=4),
    st.lists(st.floats(-2, 2), min_size=1, max_size=4),
    st.floats(0.2, 3.0),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_integrate_linear(p, q, rate, alpha, beta):
    f = lambda x: np.polyval(p, x) * math.exp(-rate * x)
    g = lambda x: np.polyval(q, x) * math.exp(-rate * x)
    tol = Tolerance(abs=1e-11, rel=1e-11)
    lhs = integrate_adaptive(lambda x: alpha * f(x) + beta * g(x), 0.0, 6.0, tol)
    rhs = alpha * integrate_adaptive(f, 0.0, 6.0, tol) + beta * integrate_adaptive(g, 0.0, 6.0, tol)
    scale = max(1.0, abs(alpha) + abs(beta))
    assert lhs == pytest.approx(rhs, abs=10 * 1e-11 * scale * 10)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(-2.0, 2.0))
def test_integrate_agrees_with_scipy_quad(width, center):
    f = lambda x: math.exp(-((x - center) / width) ** 2) * (1 + x * x)
    ours = integrate_adaptive(f, -10.0, 10.0, Tolerance(abs=1e-12, rel=1e-12))
    ref, _ = integrate.quad(f, -10.0, 10.0, epsabs=1e-13, epsrel=1e-13, limit=500)
    assert ours == pytest.approx(ref, rel=1e-10)
