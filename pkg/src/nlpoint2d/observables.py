"""Conserved quantities, the bound state and boundary-condition diagnostics."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .charge_solver import ChargeTrajectory, CouplingSpec
from .grids import AccuracyWarning, SpatialGrid
from .propagator import KIND_GAUSSIAN, KIND_TABULATED, InitialDatum, green_function, green_hat
from .specfun import EULER_GAMMA
from .wavefield import EXCLUSION_CELLS, FieldSnapshot, decompose, h1_norm

LOG2 = math.log(2.0)


def bound_state_energy(alpha: float) -> float:
    """The single negative eigenvalue -4 exp(-4 pi alpha - 2 gamma)."""
    return -4.0 * math.exp(-4 * math.pi * alpha - 2 * EULER_GAMMA)


def bound_state_profile(alpha: float, grid: SpatialGrid | None = None, y=(0.0, 0.0),
                        lambda_ref: float | None = None) -> InitialDatum:
    """L^2-normalised eigenfunction sqrt(4 pi mu) G^mu(. - y), mu = -E_b.

    With ``lambda_ref`` unset (or equal to mu) the regular part vanishes
    identically and the datum is exact. Any other reference lambda yields a
    tabulated regular part q0 (G^mu - G^lam) sampled on ``grid``.
    """
    mu = -bound_state_energy(alpha)
    q0 = math.sqrt(4 * math.pi * mu)
    if lambda_ref is None or lambda_ref == mu:
        return InitialDatum(KIND_GAUSSIAN, amplitude=0.0, charge=q0, lam=mu, center=tuple(y))
    if grid is None:
        raise ValueError("a grid is needed for a tabulated bound state")
    r = grid.distance(y)
    if r.min() < 0.5 * grid.dx:
        warnings.warn("interaction point close to a node; the profile is poorly sampled",
                      AccuracyWarning, stacklevel=2)
    # G^mu - G^lam is bounded and continuous, with value log(lam/mu)/(4 pi) at r = 0
    phi = q0 * (green_function(mu, r) - green_function(lambda_ref, r))
    return InitialDatum(KIND_TABULATED, samples=phi.astype(complex), grid=grid,
                        charge=q0, lam=lambda_ref)


def scattering_length_convert(alpha_scatt: float) -> float:
    """alpha = alpha_scatt + (gamma - log 2) / (2 pi)."""
    return alpha_scatt + (EULER_GAMMA - LOG2) / (2 * math.pi)


def scattering_length_invert(alpha: float) -> float:
    return alpha - (EULER_GAMMA - LOG2) / (2 * math.pi)


def mass(snapshot: FieldSnapshot) -> float:
    """||psi||_{L^2}.

    With a Fourier representation of the regular part the norm is split as
    ||phi||^2 + 2 Re conj(q) <G, phi> + |q|^2 / (4 pi lam), which avoids the
    slowly decaying spectrum of the Green's function.
    """
    grid, q = snapshot.grid, snapshot.q_at_t
    if snapshot.phi_hat is None:
        return grid.l2_norm(snapshot.psi)
    lam = snapshot.lambda_ref
    ph = snapshot.phi_hat
    m2 = float(np.sum(np.abs(ph) ** 2)) * grid.dk**2
    if q != 0:
        cross = np.sum(np.conj(green_hat(lam, grid, snapshot.y)) * ph) * grid.dk**2
        m2 += 2 * float(np.real(np.conj(q) * cross)) + abs(q) ** 2 / (4 * math.pi * lam)
    return math.sqrt(max(m2, 0.0))


def _coupling_potential(coupling: CouplingSpec, q: complex) -> float:
    if coupling.mode == "linear":
        return coupling.alpha * abs(q) ** 2
    return coupling.beta0 / (coupling.sigma + 1) * abs(q) ** (2 * coupling.sigma + 2)


def energy(snapshot: FieldSnapshot, coupling: CouplingSpec, *, return_complex: bool = False):
    """E = ||phi_1||^2_{H^1} + V(q) + (gamma - log 2)/(2 pi) |q|^2.

    V(q) = beta0/(sigma+1) |q|^(2 sigma + 2) in nonlinear mode and
    alpha |q|^2 in linear mode. The snapshot must be split at lam = 1.
    """
    if snapshot.lambda_ref != 1.0:
        raise ValueError("energy needs the regular part at lambda_ref = 1")
    q = snapshot.q_at_t
    total = complex(h1_norm(snapshot)) + _coupling_potential(coupling, q)
    total += (EULER_GAMMA - LOG2) / (2 * math.pi) * abs(q) ** 2
    return total if return_complex else float(total.real)


def boundary_residual(snapshot: FieldSnapshot, coupling: CouplingSpec,
                      inner_cells: float = EXCLUSION_CELLS, outer_cells: float = 6.0,
                      fit_tol: float = 1e-2) -> complex:
    """phi_lam(y) - (alpha_eff + log(sqrt(lam)/2)/(2 pi) + gamma/(2 pi)) q.

    phi_lam(y) is extrapolated by a least-squares fit against
    {1, r^2, r^2 log r} on the nodes with inner <= r/dx <= outer.
    """
    snap = snapshot if snapshot.phi_lambda is not None else decompose(snapshot, snapshot.lambda_ref)
    grid, lam, q = snap.grid, snap.lambda_ref, snap.q_at_t
    r = grid.distance(snap.y)
    sel = (r >= inner_cells * grid.dx) & (r <= outer_cells * grid.dx)
    rr = r[sel]
    basis = np.stack([np.ones_like(rr), rr**2, rr**2 * np.log(rr)], axis=1)
    vals = snap.phi_lambda[sel]
    coef, *_ = np.linalg.lstsq(basis, vals, rcond=None)
    resid = basis @ coef - vals
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if float(np.max(np.abs(resid))) > fit_tol * scale:
        warnings.warn("radial fit of the regular part is poor near y", AccuracyWarning, stacklevel=2)
    phi_y = complex(coef[0])
    a_eff = coupling.effective_alpha(q)
    theta = a_eff + (math.log(math.sqrt(lam) / 2) + EULER_GAMMA) / (2 * math.pi)
    return phi_y - theta * q


@dataclass
class ObservableSeries:
    times: list = field(default_factory=list)
    M: list = field(default_factory=list)
    E: list = field(default_factory=list)
    boundary_residual: list = field(default_factory=list)

    def append(self, t: float, m: float, e: float, res: complex):
        self.times.append(float(t))
        self.M.append(float(m))
        self.E.append(float(e))
        self.boundary_residual.append(complex(res))

    def relative_drift(self, name: str) -> float:
        vals = np.asarray(getattr(self, name))
        ref = abs(vals[0])
        if ref == 0:
            return float(np.max(np.abs(vals - vals[0])))
        return float(np.max(np.abs(vals - vals[0])) / ref)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "M", "E", "re_residual", "im_residual"])
            for t, m, e, r in zip(self.times, self.M, self.E, self.boundary_residual):
                w.writerow([f"{t:.17g}", f"{m:.17g}", f"{e:.17g}", f"{r.real:.17g}", f"{r.imag:.17g}"])
        return path


def observe(snapshots, coupling: CouplingSpec) -> ObservableSeries:
    """Mass, energy (at lam = 1) and boundary residual for each snapshot."""
    series = ObservableSeries()
    for snap in snapshots:
        s1 = snap if snap.lambda_ref == 1.0 else decompose(snap, 1.0)
        series.append(snap.t, mass(snap), energy(s1, coupling), boundary_residual(snap, coupling))
    return series
