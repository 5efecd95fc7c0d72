from __future__ import annotations

import csv
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from nlpoint2d import specfun
from nlpoint2d.specfun import (EULER_GAMMA, AccuracyError, EvalOptions, gamma, kernel_values,
                               macdonald_K0, q_series, sici, sonine_J, volterra_I, volterra_nu)

mp.mp.dps = 30


def nu_mpmath(t, a):
    return float(mp.quad(lambda s: mp.power(t, a + s) / mp.gamma(a + s + 1), [0, 1, 10, mp.inf]))


# ---- gamma -------------------------------------------------------------------


@pytest.mark.parametrize("x, expected", [(1.0, 1.0), (0.5, math.sqrt(math.pi)), (5.0, 24.0)])
def test_gamma_values(x, expected):
    assert gamma(x) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("x", [0.0, -1.0, -7.0])
def test_gamma_poles(x):
    with pytest.raises(ValueError):
        gamma(x)


# ---- nu and I ------------------------------------------------------------------


@pytest.mark.parametrize("a", [-1.0, 0.0, 1.0, 2.0])
@pytest.mark.parametrize("t", [0.01, 0.5, 1.0, 5.0, 20.0])
def test_nu_matches_mpmath(t, a):
    assert volterra_nu(t, a) == pytest.approx(nu_mpmath(t, a), rel=1e-11)


def test_nu_one_zero_against_trapezoid():
    # t = 1: the integrand 1/Gamma(s+1) is below 1e-80 past s = 60
    s = np.linspace(0.0, 60.0, 600001)
    ref = integrate.trapezoid(1.0 / np.array([math.gamma(v + 1) for v in s]), s)
    assert volterra_nu(1.0, 0.0) == pytest.approx(ref, rel=1e-9)


def test_nu_vectorised_matches_scalar():
    ts = np.array([0.1, 1.0, 3.0])
    vec = volterra_nu(ts, 0.0)
    assert vec.shape == (3,)
    for t, v in zip(ts, vec):
        assert v == volterra_nu(float(t), 0.0)


def test_nu_rejects_bad_input():
    with pytest.raises(ValueError):
        volterra_nu(0.0, 0.0)
    with pytest.raises(ValueError):
        volterra_nu(1.0, -1.5)


def test_nu_accuracy_error_carries_estimate():
    with pytest.raises(AccuracyError) as info:
        volterra_nu(7.7, 0.5, EvalOptions(rel_tol=1e-300, max_nodes=16))
    assert info.value.estimate is not None
    assert info.value.achieved is not None


@pytest.mark.parametrize("t", [0.1, 1.0, 5.0])
@pytest.mark.parametrize("order", [0.0, 1.0])
def test_derivative_ladder(t, order):
    eps = 1e-4 * t
    fd = (volterra_nu(t + eps, order) - volterra_nu(t - eps, order)) / (2 * eps)
    assert fd == pytest.approx(volterra_nu(t, order - 1), rel=1e-5)


def test_derivative_of_nu1_at_one():
    eps = 1e-4
    fd = (volterra_nu(1 + eps, 1.0) - volterra_nu(1 - eps, 1.0)) / (2 * eps)
    assert abs(fd / volterra_nu(1.0, 0.0) - 1) < 1e-6


def test_I_equals_nu_minus_one():
    for t in (0.01, 0.5, 2.0, 10.0):
        assert volterra_I(t).value == pytest.approx(volterra_nu(t, -1.0), rel=1e-12)


@pytest.mark.parametrize("t", [1e-3, 1e-4, 1e-5])
def test_I_small_t_profile(t):
    val = volterra_I(t).value * t * math.log(1 / t) ** 2
    assert 0.7 <= val <= 1.3


def test_I_small_t_against_mpmath():
    for t in (1e-4, 1e-6):
        assert volterra_I(t).value == pytest.approx(nu_mpmath(t, -1), rel=1e-10)


def test_I_large_t():
    sample = volterra_I(30.0)
    assert sample.regime == specfun.REGIME_LARGE_T
    assert abs(sample.value / math.exp(30.0) - 1) < 1e-3
    assert sample.value == pytest.approx(nu_mpmath(30.0, -1), rel=1e-12)


def test_I_integral_is_nu0():
    # tau = e^{-x} maps (0, 1] to [0, inf)
    val, _ = integrate.quad(lambda x: kernel_values(math.exp(-x)) * math.exp(-x), 0, np.inf,
                            limit=200, epsabs=1e-13, epsrel=1e-12)
    assert val == pytest.approx(volterra_nu(1.0, 0.0), rel=1e-8)


@pytest.mark.parametrize("t, regime", [(1e-4, specfun.REGIME_SMALL_T),
                                       (1.0, specfun.REGIME_QUADRATURE),
                                       (26.0, specfun.REGIME_LARGE_T)])
def test_I_regime_labels(t, regime):
    assert volterra_I(t).regime == regime


@pytest.mark.parametrize("t", [specfun.SMALL_T_CUTOFF, 25.0])
def test_regime_continuity(t):
    quad = volterra_nu(t, -1.0)
    small = specfun._kernel_small_t(np.array([t]))[0]
    large = specfun._kernel_large_t(np.array([t]))[0]
    branch = small if t < 1 else large
    assert abs(branch - quad) <= 10 * EvalOptions().rel_tol * quad


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=1e-12, max_value=60.0))
def test_I_positive(t):
    assert volterra_I(t).value > 0


def test_I_domain():
    with pytest.raises(ValueError):
        volterra_I(0.0)
    with pytest.raises(ValueError):
        volterra_I(-1.0)


# ---- J, K0, si/ci ----------------------------------------------------------------


@pytest.mark.parametrize("t, expected", [(1.0, -EULER_GAMMA), (math.exp(-EULER_GAMMA), 0.0),
                                         (math.e, -EULER_GAMMA - 1)])
def test_sonine_J(t, expected):
    assert sonine_J(t) == pytest.approx(expected, abs=1e-15)


def test_sonine_J_domain():
    with pytest.raises(ValueError):
        sonine_J(0.0)


def test_euler_gamma_digits():
    assert EULER_GAMMA == float(mp.euler)


@pytest.mark.parametrize("x", [1e-8, 1e-5, 1e-3])
def test_K0_small_x_series(x):
    # K0(x) = -(log(x/2) + gamma) I0(x) + x^2/4 + O(x^4 log x)
    series = -(math.log(x / 2) + EULER_GAMMA) * (1 + x * x / 4) + x * x / 4
    assert macdonald_K0(x) == pytest.approx(series, abs=1e-12)
    assert abs(macdonald_K0(x) + math.log(x / 2) + EULER_GAMMA) < 1e-5


def test_K0_at_one_against_integral():
    ref, _ = integrate.quad(lambda u: math.exp(-math.cosh(u)), 0, 40.0, epsabs=1e-14)
    assert abs(macdonald_K0(1.0) - ref) < 1e-10


def test_K0_monotone_and_domain():
    assert macdonald_K0(1.0) > macdonald_K0(2.0) > macdonald_K0(3.0)
    with pytest.raises(ValueError):
        macdonald_K0(0.0)


def test_sici_limits():
    si0, _ = sici(1e-12)
    assert si0 == pytest.approx(-math.pi / 2, abs=1e-11)
    for x in (1e-6, 1e-4):
        _, ci = sici(x)
        assert abs(ci - EULER_GAMMA - math.log(x)) < x
    si, ci = sici(100.0)
    assert abs(si) < 1e-2 and abs(ci) < 1e-2


@pytest.mark.parametrize("x", [0.3, 2.0, 17.0])
def test_sici_against_mpmath(x):
    si, ci = sici(x)
    assert si == pytest.approx(float(mp.si(x)) - math.pi / 2, abs=1e-14)
    assert ci == pytest.approx(float(mp.ci(x)), abs=1e-14)


def test_sici_domain():
    with pytest.raises(ValueError):
        sici(-1.0)
    assert sici(0.0)[1] == -np.inf


# ---- Q series -------------------------------------------------------------------


@pytest.mark.parametrize("dt", [0.0, 0.3, 7.0])
def test_q_series_at_zero_lambda(dt):
    assert q_series(0.0, dt) == pytest.approx(-0.5j * math.pi**2, abs=1e-14)


def test_q_series_at_zero_dt():
    assert q_series(2.5, 0.0) == pytest.approx(-0.5j * math.pi**2, abs=1e-14)


@pytest.mark.parametrize("lam, dt", [(1.0, 0.5), (3.0, 0.2), (0.5, 4.0)])
def test_q_series_matches_ci(lam, dt):
    si, ci = sici(lam * dt)
    ref = -math.pi * ((ci - EULER_GAMMA - math.log(lam * dt)) - 1j * si)
    assert q_series(lam, dt) == pytest.approx(ref, abs=1e-12)


def test_q_series_radial_identity():
    # int_{R^2} dk e^{-i k^2 dt} / (k^2 + lam) = -pi e^{i lam dt} [ci - i si],
    # the left side by a contour rotation u = -i v of its radial form
    lam, dt = 1.0, 0.5
    re, _ = integrate.quad(lambda v: (math.exp(-v * dt) / complex(lam, -v)).real, 0, np.inf, epsabs=1e-13)
    im, _ = integrate.quad(lambda v: (math.exp(-v * dt) / complex(lam, -v)).imag, 0, np.inf, epsabs=1e-13)
    radial = -1j * math.pi * complex(re, im)
    si, ci = sici(lam * dt)
    closed = -math.pi * np.exp(1j * lam * dt) * (ci - 1j * si)
    assert abs(radial - closed) < 1e-4
    # the same quantity through Q: -pi(ci - i si) = Q - pi (gamma + log(lam dt))
    via_q = np.exp(1j * lam * dt) * (q_series(lam, dt) - math.pi * (EULER_GAMMA + math.log(lam * dt)))
    assert abs(via_q - closed) < 1e-12


def test_q_series_divergence_guard():
    with pytest.raises(AccuracyError):
        q_series(1.0, 200.0)


def test_q_series_domain():
    with pytest.raises(ValueError):
        q_series(-1.0, 0.1)
    with pytest.raises(ValueError):
        q_series(1.0, -0.1)


# ---- options and table ---------------------------------------------------------


@pytest.mark.parametrize("kwargs", [{"rel_tol": 0.0}, {"max_nodes": 8}, {"asymptotic_switch_t": -1.0}])
def test_eval_options_validation(kwargs):
    with pytest.raises(ValueError):
        EvalOptions(**kwargs)


def test_free_green_at_point_matches_closed_form():
    lam, t = 2.0, 0.3
    si, ci = sici(lam * t)
    expected = -np.exp(1j * lam * t) * (ci - 1j * si) / (4 * math.pi)
    assert specfun.free_green_at_point(lam, t) == pytest.approx(expected)


def test_kernel_table(tmp_path):
    path = specfun.write_kernel_table(tmp_path / "k.csv", [1e-4, 1.0, 30.0])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "I", "regime"]
    assert [r[2] for r in rows[1:]] == [specfun.REGIME_SMALL_T, specfun.REGIME_QUADRATURE,
                                        specfun.REGIME_LARGE_T]
    assert float(rows[2][1]) == volterra_I(1.0).value
