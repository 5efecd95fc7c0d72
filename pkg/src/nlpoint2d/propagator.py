"""Free Schrödinger evolution and the forcing term of the charge equation.

A datum is psi0 = phi0 + q0 G^lam(. - y): a regular part phi0 plus an
optional multiple of the Green's function centred at the interaction point.
The forcing

    f(t) = 4 pi int_0^t I(t - s) (U0(s) psi0)(y) ds

is made finite for q0 != 0 by splitting off J, the Sonine partner of I, from
the log singular free evolution of G^lam. That gives f(t) = q0 + I * g with
a bounded integrand g and hence f(0) = q0.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .charge_solver import ORDER_LINEAR, toeplitz_convolve, uniform_grid
from .grids import AccuracyWarning, SpatialGrid
from .specfun import DEFAULT_OPTIONS, EvalOptions, free_green_at_point, macdonald_K0, sonine_J

KIND_GAUSSIAN = "gaussian"
KIND_TABULATED = "tabulated"


def green_function(lam: float, r):
    """G^lam(r) = K0(sqrt(lam) r) / (2 pi), the kernel of (-Delta + lam)^-1."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return macdonald_K0(np.sqrt(lam) * np.asarray(r, dtype=float)) / (2 * np.pi)


def green_hat(lam: float, grid: SpatialGrid, y=(0.0, 0.0)) -> np.ndarray:
    """Unitary Fourier transform of G^lam(. - y) on the k-grid."""
    return np.conj(grid.plane_wave_at(y)) / (2 * np.pi * (grid.k2 + lam))


@dataclass(frozen=True)
class InitialDatum:
    """Regular part plus ``charge`` times G^lam centred at the interaction point.

    ``kind="gaussian"`` uses amplitude * exp(-|x - center|^2 / (2 width^2));
    ``kind="tabulated"`` holds samples of the regular part on ``grid``.
    """

    kind: str = KIND_GAUSSIAN
    amplitude: complex = 1.0
    width: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    charge: complex = 0.0
    lam: float = 1.0
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)
    grid: SpatialGrid | None = None

    def __post_init__(self):
        if self.kind not in (KIND_GAUSSIAN, KIND_TABULATED):
            raise ValueError(f"unknown datum kind {self.kind!r}")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.kind == KIND_GAUSSIAN and not self.width > 0:
            raise ValueError("width must be positive")
        if self.kind == KIND_TABULATED:
            if self.samples is None or self.grid is None:
                raise ValueError("tabulated data need samples and a grid")
            if np.shape(self.samples) != (self.grid.size, self.grid.size):
                raise ValueError("samples do not match the grid shape")

    # ---- regular part ---------------------------------------------------

    def regular_on(self, grid: SpatialGrid) -> np.ndarray:
        if self.kind == KIND_GAUSSIAN:
            X, Y = grid.mesh
            r2 = (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2
            return self.amplitude * np.exp(-r2 / (2 * self.width**2))
        if grid != self.grid:
            raise ValueError("tabulated datum sampled on a different grid")
        return np.asarray(self.samples, dtype=complex)

    def regular_hat(self, grid: SpatialGrid) -> np.ndarray:
        if self.kind == KIND_GAUSSIAN:
            a2 = self.width**2
            return (self.amplitude * a2 * np.exp(-0.5 * a2 * grid.k2)
                    * np.conj(grid.plane_wave_at(self.center)))
        return grid.forward(self.regular_on(grid))

    def regular_free_at(self, y, t) -> np.ndarray:
        """(U0(t) phi0)(y) for an array of times t >= 0."""
        t = np.asarray(t, dtype=float)
        if self.kind == KIND_GAUSSIAN:
            s = self.width**2 + 2j * t
            r2 = (y[0] - self.center[0]) ** 2 + (y[1] - self.center[1]) ** 2
            return self.amplitude * self.width**2 / s * np.exp(-r2 / (2 * s))
        g = self.grid
        phat = g.forward(self.regular_on(g)) * g.plane_wave_at(y)
        tail = g.spectral_tail_fraction(phat)
        if tail > 1e-10:
            warnings.warn(f"tabulated datum under-resolved: spectral tail {tail:.2e}",
                          AccuracyWarning, stacklevel=2)
        k2 = g.k2.ravel()
        flat = phat.ravel()
        out = np.array([np.sum(np.exp(-1j * k2 * tk) * flat) for tk in np.atleast_1d(t).ravel()])
        out *= g.dk**2 / (2 * np.pi)
        return out.reshape(np.shape(t))

    def hat(self, grid: SpatialGrid, y=(0.0, 0.0)) -> np.ndarray:
        out = self.regular_hat(grid)
        if self.charge != 0:
            out = out + self.charge * green_hat(self.lam, grid, y)
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "charge": [float(np.real(self.charge)), float(np.imag(self.charge))],
             "lam": self.lam}
        if self.kind == KIND_GAUSSIAN:
            d.update(amplitude=[float(np.real(self.amplitude)), float(np.imag(self.amplitude))],
                     width=self.width, center=list(self.center))
        else:
            d.update(extent=self.grid.extent, size=self.grid.size)
        return d


def gaussian_in_domain(charge: complex, width: float, y=(0.0, 0.0), *, lam: float = 1.0,
                       beta0: float = 0.0, sigma: float = 1.0, alpha: float | None = None) -> InitialDatum:
    """A Gaussian-plus-Green datum that satisfies the boundary condition at y.

    The regular part is A exp(-|x - y|^2 / (2 width^2)) with A chosen so
    phi0(y) = (alpha_eff + log(sqrt(lam)/2)/(2 pi) + gamma/(2 pi)) q0, where
    alpha_eff = alpha for a linear coupling and beta0 |q0|^(2 sigma) otherwise.
    Such data have finite energy, unlike a bare Gaussian with q0 = 0.
    """
    from .specfun import EULER_GAMMA

    a_eff = alpha if alpha is not None else beta0 * abs(charge) ** (2 * sigma)
    theta = a_eff + (np.log(np.sqrt(lam) / 2) + EULER_GAMMA) / (2 * np.pi)
    return InitialDatum(KIND_GAUSSIAN, amplitude=theta * charge, width=width,
                        center=tuple(y), charge=charge, lam=lam)


def read_tabulated(path, *, charge: complex = 0.0, lam: float = 1.0) -> InitialDatum:
    """Load a regular part from CSV rows ``x1,x2,re,im`` on a square grid."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs = np.unique(rows[:, 0])
    n = len(xs)
    if len(rows) != n * n:
        raise ValueError("tabulated datum must cover a full square grid")
    dx = float(np.mean(np.diff(xs)))
    grid = SpatialGrid(extent=n * dx, size=n)
    if np.max(np.abs(xs - grid.axis)) > 1e-6 * dx:
        raise ValueError("tabulated nodes must be cell centres of a grid symmetric about 0")
    order = np.lexsort((rows[:, 1], rows[:, 0]))
    vals = (rows[order, 2] + 1j * rows[order, 3]).reshape(n, n)
    return InitialDatum(KIND_TABULATED, samples=vals, grid=grid, charge=charge, lam=lam)


def write_tabulated(path, grid: SpatialGrid, values: np.ndarray) -> Path:
    path = Path(path)
    X, Y = grid.mesh
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "re", "im"])
        for x1, x2, v in zip(X.ravel(), Y.ravel(), np.asarray(values).ravel()):
            w.writerow([f"{x1:.17g}", f"{x2:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])
    return path


# --------------------------------------------------------------------------
# free evolution


def free_at_point(datum: InitialDatum, y, t) -> np.ndarray:
    """(U0(t) psi0)(y) for t > 0 (for t >= 0 when the charge vanishes)."""
    t = np.asarray(t, dtype=float)
    out = datum.regular_free_at(y, t)
    if datum.charge != 0:
        out = out + datum.charge * free_green_at_point(datum.lam, t)
    return out


def free_on_grid(datum: InitialDatum, t: float, grid: SpatialGrid, y=(0.0, 0.0)) -> np.ndarray:
    """U0(t) psi0 sampled on ``grid`` by exact multiplication in Fourier space.

    A datum carrying charge is band limited by the grid; a warning is issued
    when the spectrum or the field reaches the grid limits.
    """
    hat = datum.hat(grid, y)
    tail = grid.spectral_tail_fraction(hat)
    out = grid.inverse(np.exp(-1j * grid.k2 * t) * hat)
    edge = grid.edge_fraction(out)
    if tail > 1e-8 or edge > 1e-6:
        warnings.warn(f"free evolution may alias (spectral tail {tail:.1e}, edge {edge:.1e})",
                      AccuracyWarning, stacklevel=2)
    return out


# --------------------------------------------------------------------------
# forcing


@dataclass
class ForcingTable:
    """f on a uniform time grid; ``values[0]`` equals the datum charge."""

    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values differ in shape")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must start at 0 and increase strictly")

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "re_f", "im_f"])
            for t, v in zip(self.times, self.values):
                w.writerow([f"{t:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])
        return path


def _singular_integrand(lam: float, tau: np.ndarray) -> np.ndarray:
    # 4 pi (U0 G^lam)(tau) - J(tau); bounded, tends to -(log lam + i pi/2)
    out = np.empty(tau.shape, dtype=complex)
    zero = tau == 0
    out[zero] = -(np.log(lam) + 0.5j * np.pi)
    pos = ~zero
    out[pos] = 4 * np.pi * free_green_at_point(lam, tau[pos]) - sonine_J(tau[pos])
    return out


def forcing_integrand(datum: InitialDatum, y, tau) -> np.ndarray:
    """The bounded g with f = q0 + I * g."""
    tau = np.asarray(tau, dtype=float)
    g = 4 * np.pi * datum.regular_free_at(y, tau)
    if datum.charge != 0:
        g = g + datum.charge * _singular_integrand(datum.lam, tau)
    return g


def forcing_f(datum: InitialDatum, y, T: float, h: float, *, refine: int = 2,
              order: str = ORDER_LINEAR, options: EvalOptions = DEFAULT_OPTIONS) -> ForcingTable:
    """Tabulate f on [0, T] with step h.

    The convolution with I is done by product integration on a grid
    ``refine`` times finer and then restricted, so the forcing error sits
    well below the error of the charge solver on the coarse grid.
    """
    if refine < 1:
        raise ValueError("refine must be >= 1")
    coarse = uniform_grid(T, h)
    fine_h = h / refine
    fine = np.arange(len(coarse) * refine - refine + 1) * fine_h
    g = forcing_integrand(datum, y, fine)
    f = datum.charge + toeplitz_convolve(g, fine_h, order, options)
    meta = {"datum": datum.to_dict(), "y": list(map(float, y)), "T": T, "h": h,
            "refine": refine, "order": order}
    return ForcingTable(coarse, f[::refine], meta)
