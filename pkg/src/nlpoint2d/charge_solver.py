"""Product-integration solvers for the charge equation.

The linear equation reads

    q(t) + c_lin * int_0^t I(t - s) q(s) ds = f(t),
    c_lin = 4 pi alpha - 2 log 2 + 2 gamma - i pi / 2,

and the nonlinear one replaces ``c_lin q`` by
``4 pi beta0 |q|^(2 sigma) q + c0 q`` with ``c0 = c_lin(alpha=0)``.

Convolutions against I are discretised by integrating I exactly against a
piecewise-constant or piecewise-linear interpolant of the integrand. The
cell moments come from differences of nu(., 0) and nu(., 1), so the rule is
exact for the interpolant and telescopes to nu(t, 0) for g = 1.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import specfun
from .specfun import EULER_GAMMA, EvalOptions, DEFAULT_OPTIONS

log = logging.getLogger(__name__)

ORDER_CONSTANT = "piecewise-constant"
ORDER_LINEAR = "piecewise-linear"
_ORDERS = (ORDER_CONSTANT, ORDER_LINEAR)

STATUS_COMPLETED = "completed"
STATUS_BLOWUP = "blowup_detected"
STATUS_FAILED = "tolerance_failure"

ITER_FIXED_POINT = "damped-fixed-point"
ITER_NEWTON = "newton-2d"

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def linear_coefficient(alpha: float) -> complex:
    """c_lin = 4 pi alpha - 2 log 2 + 2 gamma - i pi/2."""
    return 4 * math.pi * alpha - 2 * math.log(2.0) + 2 * EULER_GAMMA - 0.5j * math.pi


# --------------------------------------------------------------------------
# coupling / options / results


@dataclass(frozen=True)
class CouplingSpec:
    mode: str = "linear"
    alpha: float = 0.0
    beta0: float = 0.0
    sigma: float = 1.0
    allow_sigma_below_half: bool = False

    def __post_init__(self):
        if self.mode not in ("linear", "nonlinear"):
            raise ValueError(f"unknown coupling mode {self.mode!r}")
        if self.mode == "nonlinear":
            if self.sigma < 0:
                raise ValueError("sigma must be >= 0")
            if self.sigma < 0.5:
                if not self.allow_sigma_below_half:
                    raise ValueError(
                        "sigma < 1/2 is outside the well-posedness range; "
                        "pass allow_sigma_below_half=True to override"
                    )
                log.warning("running with sigma=%g < 1/2 by explicit override", self.sigma)

    def effective_alpha(self, q: complex) -> float:
        if self.mode == "linear":
            return self.alpha
        return self.beta0 * abs(q) ** (2 * self.sigma)

    def nonlinearity(self, q):
        """The integrand g(q) that the charge equation convolves with I."""
        if self.mode == "linear":
            return linear_coefficient(self.alpha) * q
        c0 = linear_coefficient(0.0)
        return 4 * math.pi * self.beta0 * np.abs(q) ** (2 * self.sigma) * q + c0 * q

    def derivatives(self, q: complex) -> tuple[complex, complex]:
        """(dg/dq, dg/dconj(q)) of the integrand, for the real 2D Newton step."""
        if self.mode == "linear":
            return linear_coefficient(self.alpha), 0.0
        c0 = linear_coefficient(0.0)
        r2 = abs(q) ** 2
        if r2 == 0.0:
            return c0 + (4 * math.pi * self.beta0 if self.sigma == 0 else 0.0), 0.0
        a = 4 * math.pi * self.beta0 * (self.sigma + 1) * r2**self.sigma + c0
        b = 4 * math.pi * self.beta0 * self.sigma * r2 ** (self.sigma - 1) * q * q
        return a, b

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "alpha": self.alpha,
            "beta0": self.beta0,
            "sigma": self.sigma,
            "allow_sigma_below_half": self.allow_sigma_below_half,
        }


@dataclass(frozen=True)
class SolverOptions:
    h: float = 1e-3
    iteration: str = ITER_FIXED_POINT
    damping: float = 0.5
    iter_tol: float = 1e-13
    max_iter: int = 200
    blowup_threshold: float = 1e3
    window: float = 0.25
    order: str = ORDER_LINEAR

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.iter_tol > 0:
            raise ValueError("iter_tol must be positive")
        if self.iteration not in (ITER_FIXED_POINT, ITER_NEWTON):
            raise ValueError(f"unknown iteration {self.iteration!r}")
        if self.order not in _ORDERS:
            raise ValueError(f"unknown interpolation order {self.order!r}")
        if not self.window > 0:
            raise ValueError("window must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ChargeTrajectory:
    grid: np.ndarray
    q: np.ndarray
    status: str = STATUS_COMPLETED
    t_star_estimate: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def t_max(self) -> float:
        return float(self.grid[-1])

    def value_at(self, t: float) -> complex:
        """Linear interpolation of q, the same interpolant the solver uses."""
        if t < self.grid[0] or t > self.grid[-1] + 1e-12:
            raise ValueError(f"t={t} outside the resolved range [0, {self.t_max}]")
        re = np.interp(t, self.grid, self.q.real)
        im = np.interp(t, self.grid, self.q.imag)
        return complex(re, im)

    def metadata(self) -> dict:
        return {
            "status": self.status,
            "t_star_estimate": self.t_star_estimate,
            "t_max": self.t_max,
            "n_nodes": int(len(self.grid)),
            **self.meta,
        }

    def write_csv(self, path) -> Path:
        """Rows ``t, re_q, im_q, abs_q`` with 17 significant digits."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "re_q", "im_q", "abs_q"])
            for t, q in zip(self.grid, self.q):
                w.writerow([f"{t:.17g}", f"{q.real:.17g}", f"{q.imag:.17g}", f"{abs(q):.17g}"])
        return path

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path


# --------------------------------------------------------------------------
# kernel moments


def cell_moments(a, b, options: EvalOptions = DEFAULT_OPTIONS):
    """Moments of I over lag intervals [a, b] (0 <= a < b), vectorised.

    Returns ``(m0, m1)`` with ``m0 = int_a^b I`` and
    ``m1 = int_a^b I(tau) (b - tau) / (b - a) dtau``; with tau = t_n - s,
    (b - tau)/(b - a) is the hat function rising towards the newer node.
    m0 always comes from nu(., 0) differences. m1 uses the nu(., 1)
    identity near the singularity and 16-point Gauss-Legendre on I where
    the cell is well separated from lag 0 (there the identity would cancel
    catastrophically).
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if np.any(a < 0) or np.any(b <= a):
        raise ValueError("cells must satisfy 0 <= a < b")
    width = b - a
    nu0_b = specfun.volterra_nu(b, 0.0, options)
    nu0_a = np.zeros_like(a)
    pos = a > 0
    if pos.any():
        nu0_a[pos] = specfun.volterra_nu(a[pos], 0.0, options)
    m0 = nu0_b - nu0_a

    m1 = np.empty_like(a)
    near = a <= 4 * width
    if near.any():
        an, bn, wn = a[near], b[near], width[near]
        nu1_b = specfun.volterra_nu(bn, 1.0, options)
        nu1_a = np.zeros_like(an)
        p = an > 0
        if p.any():
            nu1_a[p] = specfun.volterra_nu(an[p], 1.0, options)
        # int_a^b I(tau)(b - tau) dtau = nu(b,1) - nu(a,1) - (b - a) nu(a,0)
        m1[near] = (nu1_b - nu1_a - wn * nu0_a[near]) / wn
    far = ~near
    if far.any():
        af, bf = a[far], b[far]
        half = 0.5 * (bf - af)
        tau = 0.5 * (af + bf)[:, None] + half[:, None] * _GL_X[None, :]
        vals = specfun.kernel_values(tau, options)
        hat = (bf[:, None] - tau) / (bf - af)[:, None]
        m1[far] = (vals * hat * _GL_W[None, :]).sum(axis=1) * half
    return m0, m1


@dataclass(frozen=True)
class KernelWeights:
    """Node weights for (I g)(t_n) on an arbitrary increasing grid.

    ``m0[n, j]`` and ``m1[n, j]`` are the moments of cell ``j`` (between
    t_j and t_{j+1}) as seen from node n; they vanish for j >= n.
    """

    grid: np.ndarray
    order: str
    m0: np.ndarray
    m1: np.ndarray

    def matrix(self) -> np.ndarray:
        n = len(self.grid)
        W = np.zeros((n, n))
        if self.order == ORDER_LINEAR:
            W[:, :-1] += self.m0 - self.m1
            W[:, 1:] += self.m1
        else:
            W[:, 1:] += self.m0
        return W

    def apply(self, g) -> np.ndarray:
        """Discrete (I g) at every node for node values ``g``."""
        return self.matrix() @ np.asarray(g)

    def cell_sums(self) -> np.ndarray:
        """Sum of zeroth moments seen from each node, ~ nu(t_n, 0)."""
        return self.m0.sum(axis=1)


def _unique_moments(a: np.ndarray, b: np.ndarray, options: EvalOptions):
    scale = max(float(b.max()), 1e-300)
    key = np.round(np.stack([a, b], axis=1) / scale * 2**40).astype(np.int64)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    first = np.zeros(len(uniq), dtype=int)
    first[inverse[::-1]] = np.arange(len(a))[::-1]
    m0u, m1u = cell_moments(a[first], b[first], options)
    inverse = inverse.ravel()
    return m0u[inverse], m1u[inverse]


def build_weights(grid, order: str = ORDER_LINEAR, options: EvalOptions = DEFAULT_OPTIONS) -> KernelWeights:
    grid = np.asarray(grid, dtype=float)
    if order not in _ORDERS:
        raise ValueError(f"unknown interpolation order {order!r}")
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least two nodes")
    n = len(grid)
    rows, cols = np.tril_indices(n - 1)
    rows = rows + 1  # node n sees cells j < n
    a = grid[rows] - grid[cols + 1]
    b = grid[rows] - grid[cols]
    m0v, m1v = _unique_moments(a, b, options)
    m0 = np.zeros((n, n - 1))
    m1 = np.zeros((n, n - 1))
    m0[rows, cols] = m0v
    m1[rows, cols] = m1v
    return KernelWeights(grid, order, m0, m1)


def uniform_grid(T: float, h: float) -> np.ndarray:
    n = int(round(T / h))
    if n < 1 or abs(n * h - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not an integer multiple of h={h}")
    return h * np.arange(n + 1)


def toeplitz_convolve(g, h: float, order: str = ORDER_LINEAR, options: EvalOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """(I g)(t_n) at every node of the uniform grid t_n = n h.

    Uses the shift invariance of the uniform grid: only n distinct cells
    occur, so the cost is one moment table plus a discrete convolution.
    """
    g = np.asarray(g)
    n = len(g) - 1
    if n < 1:
        return np.zeros_like(g)
    k = np.arange(1, n + 1)
    m0, m1 = cell_moments((k - 1) * h, k * h, options)
    out = np.zeros(n + 1, dtype=np.result_type(g, float))
    if order == ORDER_LINEAR:
        # cell with lag index k feeds g[n-k] with (m0 - m1) and g[n-k+1] with m1
        left = np.convolve(m0 - m1, g[:-1])[:n]
        right = np.convolve(m1, g[1:])[:n]
        out[1:] = left + right
    else:
        out[1:] = np.convolve(m0, g[1:])[:n]
    return out


# --------------------------------------------------------------------------
# graded high-order convolution for callables


def graded_convolution(g, t: float, *, delta: float | None = None, ratio: float = 2.0,
                       nodes: int = 16, options: EvalOptions = DEFAULT_OPTIONS) -> complex:
    """High-order (I g)(t) for a callable g that may be log-singular at 0.

    Lags tau in [0, delta] use the exact moments of I against a linear
    expansion of g(t - tau); the rest of [0, t] is cut into panels graded
    geometrically towards both ends (the kernel singularity at tau = 0 and
    the possible singularity of g at s = 0) with Gauss-Legendre on each.
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    if delta is None:
        delta = min(1e-9, 1e-6 * t)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    n0 = specfun.volterra_nu(delta, 0.0, options)
    n1 = specfun.volterra_nu(delta, 1.0, options)
    # g(t - tau) ~ g(t) - g'(t) tau on the singular panel
    eps = 1e-5 * t
    dg = (g(t + eps) - g(t - eps)) / (2 * eps)
    total = g(t) * n0 - dg * (delta * n0 - n1)

    # lag panels from delta to t/2, geometric away from tau = delta
    lags = [delta]
    while lags[-1] * ratio < t / 2:
        lags.append(lags[-1] * ratio)
    lags.append(t / 2)
    lo, hi = np.array(lags[:-1]), np.array(lags[1:])
    tau = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * xg[None, :]
    w = 0.5 * (hi - lo)[:, None] * wg[None, :]
    total = total + np.sum(w * specfun.kernel_values(tau, options) * g(t - tau))

    # s = t - tau panels from t/2 down to 0, geometric towards s = 0
    s_edges = [t / 2]
    while s_edges[-1] / ratio > 1e-15 * t:
        s_edges.append(s_edges[-1] / ratio)
    s_edges.append(0.0)
    e = np.array(s_edges)
    lo, hi = e[1:], e[:-1]
    s = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * xg[None, :]
    w = 0.5 * (hi - lo)[:, None] * wg[None, :]
    total = total + np.sum(w * specfun.kernel_values(t - s, options) * g(s))
    return total


# --------------------------------------------------------------------------
# marching solver


class _LatticeMoments:
    """Moment tables for cells whose endpoints sit on the lattice h/2 * Z.

    The solver grid is uniform in h except where a step was halved, so every
    cell has width 1 or 2 lattice units and every lag is an integer number
    of units. Tables are filled lazily, one vectorised batch per miss.
    """

    def __init__(self, unit: float, options: EvalOptions):
        self.unit = unit
        self.options = options
        self._tables = {1: (np.full(0, np.nan), np.full(0, np.nan)),
                        2: (np.full(0, np.nan), np.full(0, np.nan))}

    def _ensure(self, width: int, lags: np.ndarray):
        m0, m1 = self._tables[width]
        top = int(lags.max()) + 1 if lags.size else 0
        if top > len(m0):
            size = max(top, 2 * len(m0), 64)
            m0 = np.concatenate([m0, np.full(size - len(m0), np.nan)])
            m1 = np.concatenate([m1, np.full(size - len(m1), np.nan)])
        missing = np.unique(lags[np.isnan(m0[lags])])
        if missing.size:
            a = missing * self.unit
            v0, v1 = cell_moments(a, a + width * self.unit, self.options)
            m0[missing] = v0
            m1[missing] = v1
        self._tables[width] = (m0, m1)
        return m0, m1

    def get(self, lags: np.ndarray, widths: np.ndarray):
        out0 = np.empty(lags.shape)
        out1 = np.empty(lags.shape)
        for w in (1, 2):
            sel = widths == w
            if sel.any():
                m0, m1 = self._ensure(w, lags[sel])
                out0[sel] = m0[lags[sel]]
                out1[sel] = m1[lags[sel]]
        return out0, out1

    def row(self, target: int, nodes: np.ndarray, order: str) -> np.ndarray:
        """Weights of ``nodes`` (lattice ints, last one == target) for node target."""
        coef = np.zeros(len(nodes))
        if len(nodes) < 2:
            return coef
        lags = target - nodes[1:]
        widths = nodes[1:] - nodes[:-1]
        m0, m1 = self.get(lags, widths)
        if order == ORDER_LINEAR:
            coef[:-1] += m0 - m1
            coef[1:] += m1
        else:
            coef[1:] += m0
        return coef


class _StepFailure(Exception):
    def __init__(self, fold: bool, last: complex):
        super().__init__("per-step solve failed")
        self.fold = fold
        self.last = last


def _solve_scalar(coupling: CouplingSpec, w: float, rhs: complex, guess: complex,
                  opts: SolverOptions, prev: complex | None = None) -> tuple[complex, int]:
    """Solve q + w * g(q) = rhs for one node.

    Linear couplings are solved directly. Otherwise the configured iteration
    runs first and a real 2D Newton iteration on (Re q, Im q) is the fallback;
    z -> |z|^(2 sigma) z is not complex differentiable, hence the 2D form.
    If both fail, the modulus equation decides between a solvable step and a
    fold, which raises :class:`_StepFailure` with ``fold=True``.
    """
    if coupling.mode == "linear":
        denom = 1 + w * linear_coefficient(coupling.alpha)
        if abs(denom) < 1e-12:
            raise _StepFailure(False, guess)
        return rhs / denom, 1

    tol = opts.iter_tol
    iters = 0
    if opts.iteration == ITER_FIXED_POINT:
        q = guess
        theta = opts.damping
        prev_step = np.inf
        for k in range(opts.max_iter):
            nxt = (1 - theta) * q + theta * (rhs - w * coupling.nonlinearity(q))
            iters += 1
            if not np.isfinite(nxt) or abs(nxt) > 1e12:
                break
            step = abs(nxt - q)
            if step <= tol * max(1.0, abs(nxt)):
                if _same_branch(coupling, w, prev if prev is not None else guess, nxt):
                    return complex(nxt), iters
                break
            # a stalled or expanding map goes straight to Newton
            if k >= 2 and step > 0.9 * prev_step:
                break
            prev_step = step
            q = nxt

    q = guess
    for k in range(opts.max_iter):
        a, b = coupling.derivatives(q)
        A = 1 + w * a
        B = w * b
        det = abs(A) ** 2 - abs(B) ** 2
        if det <= 1e-14 * max(abs(A) ** 2, 1.0):
            break
        F = q + w * coupling.nonlinearity(q) - rhs
        dq = -(np.conj(A) * F - B * np.conj(F)) / det
        q = q + dq
        iters += 1
        if not np.isfinite(q) or abs(q) > 1e12:
            break
        if abs(dq) <= tol * max(1.0, abs(q)):
            if _same_branch(coupling, w, prev if prev is not None else guess, q):
                return complex(q), iters
            break
    q, extra = _modulus_solve(coupling, w, rhs, prev if prev is not None else guess)
    return q, iters + extra


def _modulus_solve(coupling: CouplingSpec, w: float, rhs: complex, guess: complex) -> tuple[complex, int]:
    """Last-resort solve that follows the branch through ``guess``.

    The integrand has the form kappa(|q|) q, so the step equation is
    q m(|q|) = rhs with m = 1 + w kappa. The modulus solves
    G(rho) = rho |m(rho)| = |rhs| and then q = rhs / m(rho). The branch
    through the previous value survives only while G is monotone between
    |guess| and the root; otherwise the step sits past a fold.
    """
    target = abs(rhs)
    if target == 0.0:
        return 0j, 1

    def G(rho):
        return rho * np.abs(1 + w * _kappa(coupling, rho))

    rho_g = abs(guess)
    g0 = float(G(np.array(rho_g)))
    if g0 < target:
        hi = max(2 * rho_g, 1e-8)
        while float(G(np.array(hi))) < target:
            hi *= 2
            if hi > 1e12:
                raise _StepFailure(True, complex(hi))
        rho = np.linspace(rho_g, hi, 4001)
        vals = G(rho)
        idx = int(np.argmax(vals >= target))
        seg = vals[: idx + 1]
    else:
        rho = np.linspace(rho_g, 0.0, 4001)
        vals = G(rho)
        idx = int(np.argmax(vals <= target))
        seg = -vals[: idx + 1]
    if np.any(np.diff(seg) < -1e-12 * max(target, 1.0)):
        raise _StepFailure(True, guess)
    lo_r, hi_r = sorted((float(rho[max(idx - 1, 0)]), float(rho[idx])))
    if lo_r == hi_r:
        root = lo_r
    else:
        root = brentq(lambda r: float(G(np.array(r))) - target, lo_r, hi_r, xtol=1e-15, rtol=4e-16)
    return complex(rhs / (1 + w * _kappa(coupling, root))), 1


def _same_branch(coupling: CouplingSpec, w: float, prev: complex, q: complex) -> bool:
    """True when rho |m(rho)| is monotone between |prev| and |q|."""
    rho = np.linspace(abs(prev), abs(q), 65)
    vals = rho * np.abs(1 + w * _kappa(coupling, rho))
    d = np.diff(vals)
    slack = 1e-12 * max(float(vals.max()), 1.0)
    return bool(np.all(d >= -slack) or np.all(d <= slack))


def _kappa(coupling: CouplingSpec, rho):
    """kappa with g(q) = kappa(|q|) q."""
    if coupling.mode == "linear":
        return linear_coefficient(coupling.alpha) + 0 * rho
    return 4 * math.pi * coupling.beta0 * np.asarray(rho) ** (2 * coupling.sigma) + linear_coefficient(0.0)


def _check_forcing(forcing, q0: complex, h: float):
    times = np.asarray(forcing.times, dtype=float)
    values = np.asarray(forcing.values, dtype=complex)
    if len(times) < 2 or times[0] != 0.0:
        raise ValueError("forcing grid must start at t = 0 with at least two nodes")
    if np.max(np.abs(np.diff(times) - h)) > 1e-9 * h:
        raise ValueError("forcing grid spacing does not match the solver step h")
    if abs(values[0] - q0) > 1e-8 * max(1.0, abs(q0)):
        raise ValueError(
            f"q0={q0} does not match f(0)={values[0]}; the forcing of a datum "
            "with charge q0 satisfies f(0) = q0"
        )
    return times, values


def _march(coupling: CouplingSpec, forcing, q0: complex, opts: SolverOptions,
           prefix: tuple[np.ndarray, np.ndarray] | None = None,
           options: EvalOptions = DEFAULT_OPTIONS) -> ChargeTrajectory:
    h = opts.h
    times, fvals = _check_forcing(forcing, q0, h)
    n_steps = len(times) - 1
    lattice = _LatticeMoments(h / 2, options)

    # nodes in lattice units (h/2); solution values and integrand values
    nodes = [0]
    qs = [complex(q0)]
    if prefix is not None:
        pt, pq = prefix
        nodes = [int(round(t / (h / 2))) for t in pt]
        qs = [complex(v) for v in pq]
    gs = [complex(coupling.nonlinearity(v)) for v in qs]

    def f_at(idx: int) -> complex:
        if idx % 2 == 0:
            return fvals[idx // 2]
        # half-step nodes: interpolate the forcing linearly
        return 0.5 * (fvals[idx // 2] + fvals[idx // 2 + 1])

    status = STATUS_COMPLETED
    t_star = None
    stats = {"halvings": 0, "iterations": 0, "windows": 0}
    win_steps = max(1, int(round(opts.window / h)))

    start_step = nodes[-1] // 2
    step = start_step
    while step < n_steps:
        # interval attachment: freeze the history before the window and turn
        # it into a known term for every lattice node of the window
        w_end = min(step + win_steps, n_steps)
        stats["windows"] += 1
        anchor = len(nodes)
        past_nodes = np.array(nodes)
        past_g = np.array(gs)
        known = {}
        for target in range(2 * step + 2, 2 * w_end + 1, 2):
            known[target] = lattice.row(target, past_nodes, opts.order) @ past_g

        while step < w_end:
            target = 2 * (step + 1)
            try:
                q_new, it = _advance(coupling, lattice, nodes, qs, gs, anchor, known,
                                     target, f_at(target), opts)
                stats["iterations"] += it
                nodes.append(target)
                qs.append(q_new)
                gs.append(complex(coupling.nonlinearity(q_new)))
            except _StepFailure:
                stats["halvings"] += 1
                try:
                    for sub in (target - 1, target):
                        if sub not in known:
                            known[sub] = lattice.row(sub, past_nodes, opts.order) @ past_g
                        q_new, it = _advance(coupling, lattice, nodes, qs, gs, anchor, known,
                                             sub, f_at(sub), opts)
                        stats["iterations"] += it
                        nodes.append(sub)
                        qs.append(q_new)
                        gs.append(complex(coupling.nonlinearity(q_new)))
                except _StepFailure as err:
                    t_last = nodes[-1] * h / 2
                    if err.fold or abs(err.last) > opts.blowup_threshold:
                        status, t_star = STATUS_BLOWUP, t_last
                    else:
                        status = STATUS_FAILED
                    break
            step += 1
            if abs(qs[-1]) > opts.blowup_threshold:
                status, t_star = STATUS_BLOWUP, nodes[-1] * h / 2
                break
        if status != STATUS_COMPLETED:
            break

    grid = np.array(nodes, dtype=float) * (h / 2)
    meta = {"coupling": coupling.to_dict(), "options": opts.to_dict(), **stats}
    return ChargeTrajectory(grid, np.array(qs), status, t_star, meta)


def _advance(coupling, lattice, nodes, qs, gs, anchor, known, target, f_target, opts):
    # in-window history: the last frozen node plus every node added since
    local = np.array(nodes[anchor - 1:] + [target])
    coef = lattice.row(target, local, opts.order)
    hist = known[target] + coef[:-1] @ np.array(gs[anchor - 1:])
    w = coef[-1]
    rhs = f_target - hist
    guess = 2 * qs[-1] - qs[-2] if len(qs) > 1 else qs[-1]
    q, it = _solve_scalar(coupling, w, rhs, guess, opts, prev=qs[-1])
    return q, it


def solve_linear(alpha: float, forcing, q0: complex = 0.0, opts: SolverOptions = SolverOptions(),
                 options: EvalOptions = DEFAULT_OPTIONS) -> ChargeTrajectory:
    """March q + c_lin I q = f node by node; each step is a scalar division."""
    return _march(CouplingSpec("linear", alpha=alpha), forcing, q0, opts, options=options)


def solve_nonlinear(coupling: CouplingSpec, forcing, q0: complex = 0.0,
                    opts: SolverOptions = SolverOptions(),
                    options: EvalOptions = DEFAULT_OPTIONS) -> ChargeTrajectory:
    if coupling.mode != "nonlinear":
        raise ValueError("solve_nonlinear needs a nonlinear coupling")
    return _march(coupling, forcing, q0, opts, options=options)


def solve(coupling: CouplingSpec, forcing, q0: complex = 0.0, opts: SolverOptions = SolverOptions(),
          options: EvalOptions = DEFAULT_OPTIONS) -> ChargeTrajectory:
    if coupling.mode == "linear":
        return solve_linear(coupling.alpha, forcing, q0, opts, options)
    return solve_nonlinear(coupling, forcing, q0, opts, options)


def resume(trajectory: ChargeTrajectory, n_anchor: int, coupling: CouplingSpec, forcing,
           opts: SolverOptions = SolverOptions(), options: EvalOptions = DEFAULT_OPTIONS) -> ChargeTrajectory:
    """Re-solve everything after node ``n_anchor`` with the earlier part frozen."""
    prefix = (trajectory.grid[: n_anchor + 1], trajectory.q[: n_anchor + 1])
    return _march(coupling, forcing, complex(trajectory.q[0]), opts, prefix=prefix, options=options)


# --------------------------------------------------------------------------
# independent oracles


def picard_oracle(coupling: CouplingSpec, forcing, q0: complex = 0.0, *, damping: float = 1.0,
                  window: float | None = None, iter_tol: float = 1e-12, max_iter: int = 500,
                  order: str = ORDER_LINEAR, options: EvalOptions = DEFAULT_OPTIONS) -> ChargeTrajectory:
    """Global (damped) Picard iteration q <- f - W g(q) on the forcing grid.

    W is the dense weight matrix of :func:`build_weights`, a separate code
    path from the marching solver. With ``window`` set, the iteration runs on
    consecutive windows with everything before the window frozen. A window
    whose iteration diverges stops the oracle with ``tolerance_failure``.
    ``meta["contraction"]`` holds ||q2 - q1|| / ||q1 - q0|| per window.
    """
    times = np.asarray(forcing.times, dtype=float)
    f = np.asarray(forcing.values, dtype=complex)
    if abs(f[0] - q0) > 1e-8 * max(1.0, abs(q0)):
        raise ValueError("f(0) must equal q0")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    W = build_weights(times, order, options).matrix()
    n = len(times)
    q = np.full(n, complex(q0))
    bounds = [1, n]
    if window is not None:
        edges = np.searchsorted(times, np.arange(window, times[-1], window) - 1e-12 * window)
        bounds = [1] + [int(e) for e in edges if 1 < e < n] + [n]
    status = STATUS_COMPLETED
    ratios, counts = [], []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sl = slice(lo, hi)
        frozen = W[sl, :lo] @ coupling.nonlinearity(q[:lo])
        Wloc = W[sl, lo:hi]
        q[sl] = q[lo - 1]
        diffs = []
        converged = False
        for k in range(max_iter):
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                nxt = f[sl] - frozen - Wloc @ coupling.nonlinearity(q[sl])
            nxt = (1 - damping) * q[sl] + damping * nxt
            d = float(np.max(np.abs(nxt - q[sl])))
            q[sl] = nxt
            diffs.append(d)
            if not np.all(np.isfinite(nxt)) or (k > 5 and d > 1e6 * max(diffs[1], 1e-300)):
                break
            if d <= iter_tol * max(1.0, float(np.max(np.abs(nxt)))):
                converged = True
                break
        ratios.append(diffs[1] / diffs[0] if len(diffs) > 1 and diffs[0] > 0 else 0.0)
        counts.append(len(diffs))
        if not converged:
            status = STATUS_FAILED
            q = q[:lo]
            times = times[:lo]
            break
    meta = {"coupling": coupling.to_dict(), "damping": damping, "window": window,
            "contraction": ratios, "iterations": counts, "oracle": "picard"}
    return ChargeTrajectory(times, q, status, None, meta)


PROBE_LIBRARY = {
    "one": lambda t: np.ones_like(t),
    "exp": lambda t: np.exp(-t),
    "cos3": lambda t: np.cos(3 * t),
    "affine": lambda t: 1 + t,
}


def _h_half_norm(u: np.ndarray, dx: float) -> float:
    """||u||_{H^1/2} with the Sobolev-Slobodeckij seminorm by a double sum."""
    x = (np.arange(len(u)) + 0.5) * dx
    diff = np.abs(u[:, None] - u[None, :]) ** 2
    dist = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(dist, np.inf)
    semi = float(np.sum(diff / dist**2)) * dx * dx
    return float(np.sqrt(np.sum(np.abs(u) ** 2) * dx + semi))


def contraction_probe(T: float, n: int = 400, library: dict | None = None,
                      options: EvalOptions = DEFAULT_OPTIONS) -> float:
    """max over probe g of ||I g||_{H^1/2(0,T)} / (||g||_inf + ||g||_{H^1/2(0,T)}).

    Functions are sampled at n cell midpoints of (0, T); I g comes from the
    exact-moment convolution on the uniform grid with step T/n.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    library = PROBE_LIBRARY if library is None else library
    h = T / n
    nodes = h * np.arange(n + 1)
    mids = nodes[:-1] + 0.5 * h
    best = 0.0
    for g in library.values():
        gv = np.asarray(g(nodes), dtype=float)
        gm = np.asarray(g(mids), dtype=float)
        denom = float(np.max(np.abs(gm))) + _h_half_norm(gm, h)
        if denom == 0:
            continue
        Ig = toeplitz_convolve(gv, h, ORDER_LINEAR, options)
        Ig_mid = 0.5 * (Ig[:-1] + Ig[1:])
        best = max(best, _h_half_norm(Ig_mid, h) / denom)
    return best
