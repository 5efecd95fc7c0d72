from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from nlpoint2d.charge_solver import ChargeTrajectory, SolverOptions, solve_linear
from nlpoint2d.grids import AccuracyWarning, SpatialGrid
from nlpoint2d.observables import bound_state_energy, bound_state_profile, mass
from nlpoint2d.propagator import InitialDatum, forcing_f, free_on_grid, green_function, green_hat
from nlpoint2d.specfun import sici
from nlpoint2d.wavefield import (FieldSnapshot, _cell_weights, decompose, duhamel_kernel_sum,
                                 h1_norm, read_field, reconstruct, reconstruct_series, write_field,
                                 write_slice)

Y = (0.0, 0.0)
GRID = SpatialGrid(32.0, 256)


@pytest.fixture(scope="module")
def linear_gaussian():
    d = InitialDatum(amplitude=1.0)
    h = 1e-3
    tr = solve_linear(0.0, forcing_f(d, Y, 0.5, h), 0.0, SolverOptions(h=h))
    return d, tr


# ---- Duhamel kernel ----------------------------------------------------------------


# 0.499j and 0.501j sit either side of the series / closed form switch
@pytest.mark.parametrize("z", [1e-8, 0.2j, 0.499j, 0.501j, -0.501, 3.0j, -40.0j])
def test_cell_weights_against_quadrature(z):
    wo, wn = _cell_weights(np.array([complex(z)]))
    f = lambda v, w: np.exp(z * (1 - v)) * w(v)  # noqa: E731
    for got, w in ((wo[0], lambda v: 1 - v), (wn[0], lambda v: v)):
        re, _ = integrate.quad(lambda v: f(v, w).real, 0, 1, epsabs=1e-14)
        im, _ = integrate.quad(lambda v: f(v, w).imag, 0, 1, epsabs=1e-14)
        assert abs(got - complex(re, im)) < 1e-12


@pytest.mark.parametrize("omega", [0.0, 0.7, 25.0])
def test_duhamel_sum_exact_for_linear_charge(omega):
    # q(s) = s is reproduced exactly by the piecewise-linear rule
    times = np.linspace(0.0, 1.0, 11)
    stops = np.array([1.0, 0.55, 0.3])
    out = duhamel_kernel_sum(np.array([omega]), times, times.astype(complex), stops)
    for t, got in zip(stops, out[:, 0]):
        re, _ = integrate.quad(lambda s: (np.exp(-1j * omega * (t - s)) * s).real, 0, t, epsabs=1e-14)
        im, _ = integrate.quad(lambda s: (np.exp(-1j * omega * (t - s)) * s).imag, 0, t, epsabs=1e-14)
        assert abs(got - complex(re, im)) < 1e-12


# ---- reconstruction ---------------------------------------------------------------


def test_zero_charge_is_free_evolution():
    d = InitialDatum(amplitude=1.0)
    times = np.linspace(0.0, 1.0, 101)
    tr = ChargeTrajectory(times, np.zeros_like(times, dtype=complex))
    snap = reconstruct(tr, d, Y, 0.7, GRID)
    assert np.max(np.abs(snap.psi - free_on_grid(d, 0.7, GRID))) < 1e-12


def test_initial_snapshot_is_datum(linear_gaussian):
    d, tr = linear_gaussian
    snap = reconstruct(tr, d, Y, 0.0, GRID)
    assert np.max(np.abs(snap.psi - d.regular_on(GRID))) < 1e-12


def test_bound_state_initial_regular_part_vanishes():
    d = bound_state_profile(0.0)
    times = np.linspace(0.0, 0.1, 11)
    tr = ChargeTrajectory(times, np.full(len(times), d.charge, dtype=complex))
    snap = reconstruct(tr, d, Y, 0.0, GRID, lambda_ref=d.lam)
    assert np.max(np.abs(snap.phi_lambda)) < 1e-10


def test_real_space_duhamel_oracle(linear_gaussian):
    # psi = U_t psi0 + (1/4pi) int_0^t q(t - tau) e^{i r^2/4 tau} / tau dtau,
    # split as q(t) E(a/t) + int_{a/t}^inf (q(t - a/u) - q(t)) e^{iu}/u du, a = r^2/4
    d, tr = linear_gaussian
    t = 0.5
    snap = reconstruct(tr, d, Y, t, GRID)
    qt = tr.value_at(t)

    def qi(s):
        return np.interp(s, tr.grid, tr.q.real) + 1j * np.interp(s, tr.grid, tr.q.imag)

    X, Yy = GRID.mesh
    r = GRID.distance(Y)
    nodes = np.argwhere((r >= 0.1) & (r <= 1.0) & (np.abs(Yy) < GRID.dx))
    assert len(nodes) >= 8
    for i, j in nodes:
        a = r[i, j] ** 2 / 4
        lo = a / t
        si, ci = sici(lo)
        tail = -ci - 1j * si
        g = lambda u: (qi(t - a / u) - qt) / u  # noqa: E731
        parts = []
        for part in (lambda u: g(u).real, lambda u: g(u).imag):
            c, _ = integrate.quad(part, lo, np.inf, weight="cos", wvar=1.0)
            s, _ = integrate.quad(part, lo, np.inf, weight="sin", wvar=1.0)
            parts.append(c + 1j * s)
        rem = parts[0] + 1j * parts[1]
        s2 = 1 + 2j * t
        free = np.exp(-(r[i, j] ** 2) / (2 * s2)) / s2
        ref = free + (qt * tail + rem) / (4 * math.pi)
        assert abs(snap.psi[i, j] - ref) < 1e-3


def test_psi_lambda_ref_dependence_is_green_truncation(linear_gaussian):
    # psi differs between reference lambdas only by the grid truncation of G^1 - G^2.5
    d, tr = linear_gaussian
    s1, s2 = reconstruct_series(tr, d, Y, [0.3], GRID, 1.0)[0], reconstruct(tr, d, Y, 0.3, GRID, 2.5)
    r = GRID.distance(Y)
    exact = green_function(1.0, r) - green_function(2.5, r)
    spectral = GRID.inverse(green_hat(1.0, GRID, Y) - green_hat(2.5, GRID, Y))
    q = s1.q_at_t
    assert np.max(np.abs((s1.psi - s2.psi) - q * (exact - spectral))) < 1e-10
    assert np.max(np.abs(s1.psi - s2.psi)) < 1e-4 * abs(q)


def test_reconstruction_identity(linear_gaussian):
    d, tr = linear_gaussian
    snap = reconstruct(tr, d, Y, 0.4, GRID)
    split = snap.phi_lambda + snap.q_at_t * green_function(1.0, GRID.distance(Y))
    assert np.max(np.abs(snap.psi - split)) < 1e-10
    assert snap.q_at_t == tr.value_at(0.4)


def test_series_matches_single(linear_gaussian):
    d, tr = linear_gaussian
    series = reconstruct_series(tr, d, Y, [0.45, 0.1, 0.25], GRID)
    for s in series:
        assert np.max(np.abs(s.psi - reconstruct(tr, d, Y, s.t, GRID).psi)) < 1e-12


def test_bound_state_mass_constant():
    d = bound_state_profile(0.0)
    h = 1e-3
    tr = solve_linear(0.0, forcing_f(d, Y, 0.5, h), d.charge, SolverOptions(h=h))
    snaps = reconstruct_series(tr, d, Y, [0.0, 0.25, 0.5], GRID, lambda_ref=d.lam)
    m = [mass(s) for s in snaps]
    assert max(abs(v - 1) for v in m) < 1e-3
    # the regular part stays small since q rotates at the bound-state frequency
    assert abs(np.angle(snaps[-1].q_at_t / d.charge) + bound_state_energy(0.0) * 0.5) < 1e-2


def test_reconstruct_rejects_bad_requests(linear_gaussian):
    d, tr = linear_gaussian
    with pytest.raises(ValueError):
        reconstruct(tr, d, Y, 0.6, GRID)
    with pytest.raises(ValueError):
        reconstruct(tr, d, Y, 0.1, GRID, lambda_ref=0.0)
    with pytest.raises(ValueError):
        reconstruct(tr, d, (GRID.axis[128], GRID.axis[128]), 0.1, GRID)


# ---- decomposition ----------------------------------------------------------------


def test_decompose_zero_charge(linear_gaussian):
    d, _ = linear_gaussian
    times = np.linspace(0.0, 1.0, 11)
    snap = reconstruct(ChargeTrajectory(times, np.zeros(11, dtype=complex)), d, Y, 0.2, GRID)
    out = decompose(snap, 3.0)
    assert np.array_equal(out.phi_lambda, snap.phi_lambda)
    assert out.lambda_ref == 3.0


def test_decompose_lambda_shift_is_green_difference(linear_gaussian):
    d, tr = linear_gaussian
    snap = reconstruct(tr, d, Y, 0.3, GRID)
    out = decompose(snap, 4.0)
    r = GRID.distance(Y)
    diff = snap.q_at_t * (green_function(1.0, r) - green_function(4.0, r))
    assert np.max(np.abs(out.phi_lambda - snap.phi_lambda - diff)) < 1e-12
    # the Fourier copy differs only by the grid truncation of the same shift
    assert np.max(np.abs(GRID.inverse(out.phi_hat) - out.phi_lambda)) < 1e-4 * abs(snap.q_at_t)


def test_decompose_nodewise_pure_green():
    # psi = q G^2 sampled on nodes only: phi_2 is zero away from y and the ring mean inside
    q = 0.8 - 0.3j
    psi = q * green_function(2.0, GRID.distance(Y))
    snap = FieldSnapshot(0.0, psi, None, q, 2.0, GRID, Y)
    out = decompose(snap, 2.0)
    assert out.phi_hat is None
    assert np.max(np.abs(out.phi_lambda)) < 1e-14


def test_decompose_rejects_nonpositive_lambda(linear_gaussian):
    d, tr = linear_gaussian
    with pytest.raises(ValueError):
        decompose(reconstruct(tr, d, Y, 0.1, GRID), 0.0)


# ---- H^1 norm ------------------------------------------------------------------------


def test_h1_zero_field():
    assert h1_norm(np.zeros(GRID.k2.shape), GRID) == 0.0


def test_h1_gaussian():
    # ||f||^2 = pi and ||grad f||^2 = pi for f = e^{-|x|^2/2}
    X, Yy = GRID.mesh
    assert h1_norm(np.exp(-(X**2 + Yy**2) / 2), GRID) == pytest.approx(2 * math.pi, rel=1e-12)


def test_h1_parseval_for_l2_part():
    rng = np.random.default_rng(3)
    grid = SpatialGrid(8.0, 32)
    f = rng.normal(size=(32, 32)) + 1j * rng.normal(size=(32, 32))
    X, Yy = grid.mesh
    f *= np.exp(-(X**2 + Yy**2))
    hat = grid.forward(f)
    kin = float(np.sum(grid.k2 * np.abs(hat) ** 2) * grid.dk**2)
    assert h1_norm(f, grid) - kin == pytest.approx(grid.l2_norm(f) ** 2, rel=1e-12)


def test_h1_warns_on_boundary_mass():
    with pytest.warns(AccuracyWarning):
        h1_norm(np.ones(GRID.k2.shape), GRID)


def test_h1_needs_grid():
    with pytest.raises(ValueError):
        h1_norm(np.zeros((4, 4)))


# ---- export --------------------------------------------------------------------------


def test_field_round_trip(tmp_path, linear_gaussian):
    d, tr = linear_gaussian
    snap = reconstruct(tr, d, (0.01, -0.02), 0.2, GRID)
    back = read_field(write_field(tmp_path / "f.npz", snap))
    assert np.array_equal(back.psi, snap.psi)
    assert np.array_equal(back.phi_lambda, snap.phi_lambda)
    assert back.q_at_t == snap.q_at_t and back.t == snap.t
    assert back.grid == GRID and back.y == (0.01, -0.02)


def test_slice_csv(tmp_path, linear_gaussian):
    d, tr = linear_gaussian
    snap = reconstruct(tr, d, Y, 0.2, GRID)
    lines = write_slice(tmp_path / "s.csv", snap).read_text().splitlines()
    assert lines[0] == "x,re_psi,im_psi,re_phi,im_phi"
    assert len(lines) == GRID.size + 1
    with pytest.raises(ValueError):
        write_slice(tmp_path / "s.csv", snap, axis=2)


def test_under_resolved_snapshot_warns():
    grid = SpatialGrid(8.0, 16)
    d = InitialDatum(amplitude=1.0, width=0.2)
    times = np.linspace(0.0, 0.1, 11)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        reconstruct(ChargeTrajectory(times, np.zeros(11, dtype=complex)), d, Y, 0.0, grid)
    assert any(issubclass(w.category, AccuracyWarning) for w in rec)
