"""Special functions behind the charge-equation kernel.

The central objects are the Volterra functions

    nu(t, a) = int_0^inf t**(a + s) / Gamma(a + s + 1) ds,

the kernel I(t) = nu(t, -1) and its Sonine partner J(t) = -gamma - log(t).
Gamma, K0 and the sine/cosine integrals are thin wrappers over
:mod:`scipy.special` with the domain checks the rest of the package relies on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

# Euler-Mascheroni constant, 0.57721566490153286060...
EULER_GAMMA = 0.57721566490153286060651209008240243

SMALL_T_CUTOFF = 1e-3

REGIME_QUADRATURE = "series-quadrature"
REGIME_SMALL_T = "small-t-asymptotic"
REGIME_LARGE_T = "large-t-asymptotic"


class AccuracyError(ArithmeticError):
    """Raised when a quadrature cannot reach the requested tolerance."""

    def __init__(self, message: str, estimate=None, achieved=None):
        super().__init__(message)
        self.estimate = estimate
        self.achieved = achieved


@dataclass(frozen=True)
class EvalOptions:
    rel_tol: float = 1e-12
    max_nodes: int = 4096
    asymptotic_switch_t: float = 25.0

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_nodes < 16:
            raise ValueError("max_nodes must be at least 16")
        if not self.asymptotic_switch_t > 0:
            raise ValueError("asymptotic_switch_t must be positive")


DEFAULT_OPTIONS = EvalOptions()


@dataclass(frozen=True)
class KernelSample:
    t: float
    value: float
    regime: str


def gamma(x: float) -> float:
    """Gamma function; raises at the poles 0, -1, -2, ..."""
    if x <= 0 and float(x).is_integer():
        raise ValueError(f"Gamma has a pole at {x}")
    return float(special.gamma(x))


def _check_positive(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"{name} must be > 0")
    return arr


# exp-sinh rule on s in (0, inf): s = c * exp(pi/2 * sinh(x)), |x| <= _XMAX.
_XMAX = 4.5


def _expsinh_sum(logt: np.ndarray, a: float, scale: np.ndarray, dx: float) -> np.ndarray:
    x = np.arange(-_XMAX, _XMAX + 0.5 * dx, dx)
    e = np.exp(0.5 * np.pi * np.sinh(x))
    s = scale[:, None] * e[None, :]
    jac = scale[:, None] * (0.5 * np.pi * np.cosh(x) * e)[None, :]
    u = a + s + 1.0
    with np.errstate(over="ignore", under="ignore"):
        f = special.gammasgn(u) * np.exp((a + s) * logt[:, None] - special.gammaln(u))
    return (f * jac).sum(axis=1) * dx


def volterra_nu(t, a: float, options: EvalOptions = DEFAULT_OPTIONS):
    """Volterra function nu(t, a) for real order a >= -1, vectorised in t.

    The defining integral is evaluated with an exp-sinh trapezoid rule whose
    scale follows the peak of the integrand (near s = 0 for t < 1, near
    s = t otherwise). The step is halved until two consecutive levels agree
    to ``options.rel_tol``.
    """
    if a < -1:
        raise ValueError("orders below -1 are not supported")
    tt = _check_positive("t", t)
    flat = np.atleast_1d(tt).ravel()
    logt = np.log(flat)
    scale = np.maximum(flat, 1.0)
    dx = 1.0 / 32
    prev = _expsinh_sum(logt, a, scale, dx)
    while True:
        dx /= 2
        cur = _expsinh_sum(logt, a, scale, dx)
        err = np.abs(cur - prev)
        if np.all(err <= options.rel_tol * np.abs(cur)):
            break
        if 2 * _XMAX / dx > options.max_nodes:
            raise AccuracyError(
                f"nu(t, {a}) did not converge within {options.max_nodes} nodes",
                estimate=cur,
                achieved=float(np.max(err / np.abs(cur))),
            )
        prev = cur
    out = cur.reshape(np.shape(tt))
    return float(out) if np.ndim(tt) == 0 else out


_LAG_X, _LAG_W = np.polynomial.laguerre.laggauss(64)


def _kernel_small_t(t: np.ndarray) -> np.ndarray:
    # v = s*log(1/t): I(t) = 1/(t L^2) int e^{-v} v / Gamma(1 + v/L) dv
    L = np.log(1.0 / t)
    integrand = _LAG_X[None, :] * special.rgamma(1.0 + _LAG_X[None, :] / L[:, None])
    return (integrand * _LAG_W[None, :]).sum(axis=1) / (t * L * L)


def _kernel_large_t(t: np.ndarray) -> np.ndarray:
    # I(t) = e^t + int_0^inf e^{-t x} / (pi^2 + log^2 x) dx, with x = v/t
    lv = np.log(_LAG_X)[None, :] - np.log(t)[:, None]
    corr = (_LAG_W[None, :] / (np.pi**2 + lv * lv)).sum(axis=1) / t
    return np.exp(t) + corr


def kernel_values(t, options: EvalOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Vectorised I(t) = nu(t, -1), dispatching on the regime of each t."""
    tt = _check_positive("t", t)
    flat = np.atleast_1d(tt).ravel()
    out = np.empty_like(flat)
    small = flat < SMALL_T_CUTOFF
    large = flat > options.asymptotic_switch_t
    mid = ~(small | large)
    if small.any():
        out[small] = _kernel_small_t(flat[small])
    if large.any():
        out[large] = _kernel_large_t(flat[large])
    if mid.any():
        out[mid] = volterra_nu(flat[mid], -1.0, options)
    return out.reshape(np.shape(tt)) if np.ndim(tt) else out[0]


def kernel_regime(t: float, options: EvalOptions = DEFAULT_OPTIONS) -> str:
    if t < SMALL_T_CUTOFF:
        return REGIME_SMALL_T
    if t > options.asymptotic_switch_t:
        return REGIME_LARGE_T
    return REGIME_QUADRATURE


def volterra_I(t: float, options: EvalOptions = DEFAULT_OPTIONS) -> KernelSample:
    if not t > 0:
        raise ValueError("I(t) is defined for t > 0 only")
    return KernelSample(float(t), float(kernel_values(t, options)), kernel_regime(t, options))


def sonine_J(t):
    """Sonine partner of I: J(t) = -gamma - log t."""
    tt = _check_positive("t", t)
    out = -EULER_GAMMA - np.log(tt)
    return float(out) if np.ndim(tt) == 0 else out


def macdonald_K0(x):
    xx = _check_positive("x", x)
    out = special.k0(xx)
    return float(out) if np.ndim(xx) == 0 else out


def sici(x):
    """Return (si, ci) with si(x) = Si(x) - pi/2 and ci the cosine integral.

    si is odd-shifted so that si(0) = -pi/2 and si(inf) = 0. ci needs x > 0.
    """
    xx = np.asarray(x, dtype=float)
    if np.any(xx < 0):
        raise ValueError("sici is implemented for x >= 0")
    Si, Ci = special.sici(xx)
    si = Si - 0.5 * np.pi
    if np.any(xx == 0):
        Ci = np.where(xx == 0, -np.inf, Ci)
    if np.ndim(xx) == 0:
        return float(si), float(Ci)
    return si, Ci


def _cin_series(x: np.ndarray, rel_tol: float) -> np.ndarray:
    """sum_{n>=1} (-x^2)^n / (2n (2n)!), i.e. ci(x) - gamma - log x."""
    x2 = x * x
    term = np.ones_like(x)  # (-x^2)^n / (2n)! without the 1/(2n) factor
    total = np.zeros_like(x)
    biggest = np.zeros_like(x)
    for n in range(1, 400):
        term = term * (-x2) / ((2 * n - 1) * (2 * n))
        contrib = term / (2 * n)
        total = total + contrib
        biggest = np.maximum(biggest, np.abs(contrib))
        if np.all(np.abs(contrib) <= rel_tol * np.maximum(np.abs(total), 1e-300)):
            break
    else:
        raise AccuracyError("Q series did not terminate", estimate=total)
    # cancellation guard: the largest term times eps must stay below budget
    lost = biggest * np.finfo(float).eps
    if np.any(lost > max(rel_tol, 1e-10) * np.maximum(np.abs(total), 1.0)):
        raise AccuracyError("lambda*dt too large for the Q series", estimate=total)
    return total


def q_series(lam, dt, options: EvalOptions = DEFAULT_OPTIONS):
    """Q(lam; dt) = -pi * (sum_n (-(dt lam)^2)^n / (2n (2n)!) - i si(dt lam)).

    Vectorised over ``dt``. Q(0; dt) = Q(lam; 0) = -i pi^2 / 2.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    d = np.asarray(dt, dtype=float)
    if np.any(d < 0):
        raise ValueError("dt must be >= 0")
    x = lam * np.atleast_1d(d).ravel()
    series = _cin_series(x, options.rel_tol)
    si = special.sici(x)[0] - 0.5 * np.pi
    out = (-np.pi * (series - 1j * si)).reshape(np.shape(d))
    return complex(out) if np.ndim(d) == 0 else out


def free_green_at_point(lam: float, t) -> np.ndarray:
    """(U0(t) G^lam)(0) for t > 0, the free evolution of G^lam at its centre.

    Equals -(1/4pi) e^{i lam t} [ci(lam t) - i si(lam t)], which is log
    singular at t = 0.
    """
    tt = _check_positive("t", t)
    si, ci = sici(lam * tt)
    return -np.exp(1j * lam * tt) * (ci - 1j * si) / (4 * np.pi)


def write_kernel_table(path, t_values, options: EvalOptions = DEFAULT_OPTIONS) -> Path:
    """Dump (t, I, regime) rows to CSV with header ``t,I,regime``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "I", "regime"])
        for t in t_values:
            s = volterra_I(float(t), options)
            writer.writerow([f"{s.t:.17g}", f"{s.value:.17g}", s.regime])
    return path
