"""Release checks: kernel identities, spectral ground truth, conservation.

Each ``check_*`` function runs one property at its fixed tolerance and
returns a :class:`CheckResult`. ``run_all`` collects them for the
``selftest`` subcommand and the acceptance suite.
"""

from __future__ import annotations

import math
import tempfile
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import specfun
from .charge_solver import (STATUS_BLOWUP, STATUS_COMPLETED, CouplingSpec, SolverOptions,
                            build_weights, contraction_probe, graded_convolution,
                            picard_oracle, solve, solve_linear)
from .grids import SpatialGrid
from .observables import bound_state_energy, bound_state_profile, mass, observe
from .propagator import InitialDatum, forcing_f, gaussian_in_domain
from .wavefield import reconstruct_series

Y0 = (0.0, 0.0)
DEFOCUSING = CouplingSpec("nonlinear", beta0=1.0, sigma=1.0)
LINEAR0 = CouplingSpec("linear", alpha=0.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{mark}  {self.name}: measured {self.measured:.3e} vs tolerance {self.tolerance:.1e}{extra}"


def _result(name, measured, tol, passed, detail=""):
    return CheckResult(name, float(measured), float(tol), bool(passed), detail)


# --------------------------------------------------------------------------


def check_sonine(n: int = 40, tol: float = 1e-6, budget_s: float = 60.0) -> CheckResult:
    """max |(I * J)(t) - 1| over n log-spaced t in [1e-2, 10]."""
    start = time.perf_counter()
    ts = np.geomspace(1e-2, 10.0, n)
    err = max(abs(graded_convolution(specfun.sonine_J, float(t)) - 1.0) for t in ts)
    elapsed = time.perf_counter() - start
    return _result("sonine identity", err, tol, err < tol and elapsed < budget_s,
                   f"{elapsed:.1f} s")


def check_kernel_asymptotics() -> CheckResult:
    small = [specfun.volterra_I(t).value * t * math.log(1 / t) ** 2 for t in (1e-3, 1e-4, 1e-5)]
    large = abs(specfun.volterra_I(30.0).value / math.exp(30.0) - 1)
    ok = all(0.7 <= v <= 1.3 for v in small) and large < 1e-3
    detail = "small-t " + ", ".join(f"{v:.4f}" for v in small) + f"; I(30)/e^30 - 1 = {large:.1e}"
    return _result("kernel asymptotics", large, 1e-3, ok, detail)


def check_moment_exactness(tol: float = 1e-8) -> CheckResult:
    worst = 0.0
    for T in (0.1, 1.0, 10.0):
        grid = np.linspace(0.0, T, 401)
        w = build_weights(grid)
        ref = specfun.volterra_nu(T, 0.0)
        worst = max(worst, abs(w.cell_sums()[-1] - ref) / ref)
    return _result("moment exactness", worst, tol, worst < tol)


def check_bound_state(h: float = 1e-3, size: int = 256, budget_s: float = 300.0) -> CheckResult:
    start = time.perf_counter()
    datum = bound_state_profile(0.0, y=Y0)
    forcing = forcing_f(datum, Y0, 1.0, h)
    traj = solve_linear(0.0, forcing, datum.charge, SolverOptions(h=h))
    mod = float(np.max(np.abs(np.abs(traj.q) / abs(traj.q[0]) - 1)))
    e_b = bound_state_energy(0.0)
    phase = np.unwrap(np.angle(traj.q)) + e_b * traj.grid - np.angle(traj.q[0])
    ph = float(np.max(np.abs(phase)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        snaps = reconstruct_series(traj, datum, Y0, np.linspace(0, 1, 5), SpatialGrid(32.0, size))
    masses = [mass(s) for s in snaps]
    elapsed = time.perf_counter() - start
    ok = mod < 1e-3 and ph < 1e-2 and elapsed < budget_s
    detail = f"phase {ph:.1e} (tol 1e-2), mass {min(masses):.6f}..{max(masses):.6f}, {elapsed:.1f} s"
    return _result("bound-state stationarity", mod, 1e-3, ok, detail)


def check_oracles(h: float = 1e-3) -> CheckResult:
    datum = InitialDatum(amplitude=1.0)
    forcing = forcing_f(datum, Y0, 1.0, h)
    lin = solve_linear(0.0, forcing, 0.0, SolverOptions(h=h))
    lin_o = picard_oracle(LINEAR0, forcing, 0.0)
    e_lin = float(np.max(np.abs(lin.q - lin_o.q)))
    nl = solve(DEFOCUSING, forcing, 0.0, SolverOptions(h=h))
    nl_o = picard_oracle(DEFOCUSING, forcing, 0.0, damping=0.25, window=0.01, max_iter=3000)
    m = len(nl_o.q)
    e_nl = float(np.max(np.abs(nl.q[:m] - nl_o.q))) if m > 1 else math.inf
    ok = (lin_o.status == STATUS_COMPLETED and e_lin < 1e-4
          and nl_o.status == STATUS_COMPLETED and e_nl < 1e-3)
    return _result("oracle equivalence", e_lin, 1e-4, ok,
                   f"nonlinear {e_nl:.1e} vs 1e-3 over [0, {nl_o.t_max:g}]")


def conservation_run(h: float, size: int, T: float = 1.0, n_obs: int = 11):
    datum = gaussian_in_domain(1.0, 1.0, Y0, beta0=DEFOCUSING.beta0, sigma=DEFOCUSING.sigma)
    forcing = forcing_f(datum, Y0, T, h)
    traj = solve(DEFOCUSING, forcing, datum.charge, SolverOptions(h=h))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        snaps = reconstruct_series(traj, datum, Y0, np.linspace(0, T, n_obs), SpatialGrid(32.0, size))
        series = observe(snaps, DEFOCUSING)
    return traj, series


def check_conservation() -> CheckResult:
    _, ref = conservation_run(1e-3, 256)
    _, fine = conservation_run(5e-4, 512)
    m0, m1 = ref.relative_drift("M"), fine.relative_drift("M")
    e0, e1 = ref.relative_drift("E"), fine.relative_drift("E")
    ok = m0 < 1e-3 and e0 < 1e-2 and m1 <= m0 / 2 and e1 <= e0 / 2
    detail = f"energy {e0:.1e} -> {e1:.1e}, mass {m0:.1e} -> {m1:.1e} on refinement"
    return _result("conservation", max(m0, e0), 1e-3, ok, detail)


def blowup_sweep(focusing_amplitudes=(0.05, 0.1, 0.2), defocusing_betas=(1.0, 2.0, 4.0),
                 T: float = 1.0, h: float = 1e-3):
    out = {"focusing": [], "defocusing": []}
    for amp in focusing_amplitudes:
        c = CouplingSpec("nonlinear", beta0=-1.0, sigma=1.0)
        d = InitialDatum(amplitude=amp)
        traj = solve(c, forcing_f(d, Y0, T, h), 0.0, SolverOptions(h=h))
        out["focusing"].append((amp, traj.status, traj.t_star_estimate))
    d = InitialDatum(amplitude=1.0)
    f = forcing_f(d, Y0, T, h)
    for beta in defocusing_betas:
        c = CouplingSpec("nonlinear", beta0=beta, sigma=1.0)
        traj = solve(c, f, 0.0, SolverOptions(h=h))
        out["defocusing"].append((beta, traj.status, traj.t_star_estimate))
    return out


def check_blowup_alternative() -> CheckResult:
    sweep = blowup_sweep()
    hits = [(a, t) for a, s, t in sweep["focusing"] if s == STATUS_BLOWUP and t is not None]
    all_done = all(s == STATUS_COMPLETED for _, s, _ in sweep["defocusing"])
    ok = bool(hits) and all(math.isfinite(t) for _, t in hits) and all_done
    t_first = hits[0][1] if hits else math.nan
    detail = "focusing t* " + ", ".join(f"A={a:g}:{t}" for a, s, t in sweep["focusing"])
    detail += f"; defocusing {'all completed' if all_done else 'NOT all completed'}"
    return _result("blow-up alternative", t_first, math.inf, ok, detail)


def check_contraction() -> CheckResult:
    r = [contraction_probe(T) for T in (0.01, 0.1, 1.0)]
    ok = r[0] < r[1] < r[2]
    return _result("contraction trend", r[0], r[1], ok, "ratios " + ", ".join(f"{v:.4f}" for v in r))


def convergence_ratio(coupling: CouplingSpec, datum: InitialDatum, h0: float = 2e-3,
                      T: float = 1.0) -> tuple[float, list[float]]:
    qs = []
    for level in range(3):
        h = h0 / 2**level
        traj = solve(coupling, forcing_f(datum, Y0, T, h), datum.charge, SolverOptions(h=h))
        qs.append(traj.q[:: 2**level])
    errs = [float(np.max(np.abs(qs[i] - qs[i + 1]))) for i in range(2)]
    return errs[0] / errs[1], errs


def check_self_convergence(tol: float = 1.8) -> CheckResult:
    datum = InitialDatum(amplitude=1.0)
    r_lin, _ = convergence_ratio(LINEAR0, datum)
    r_nl, _ = convergence_ratio(DEFOCUSING, datum)
    worst = min(r_lin, r_nl)
    return _result("self-convergence", worst, tol, worst >= tol,
                   f"linear {r_lin:.2f}, nonlinear {r_nl:.2f}")


DETERMINISM_CONFIG = {
    "coupling": {"mode": "nonlinear", "beta0": 1.0, "sigma": 1.0},
    "datum": {"kind": "gaussian_in_domain", "charge": [1.0, 0.0], "width": 1.0},
    "T": 0.2,
    "solver": {"h": 0.002},
    "grid": {"extent": 16.0, "size": 64},
    "snapshot_times": [0.2],
    "observable_count": 3,
}


def check_determinism() -> CheckResult:
    from .config import SimulationConfig, run_simulation

    with tempfile.TemporaryDirectory() as tmp:
        dirs = [Path(tmp) / "a", Path(tmp) / "b"]
        for d in dirs:
            run_simulation(SimulationConfig.from_dict(DETERMINISM_CONFIG), d)
        names = sorted(p.name for p in dirs[0].iterdir())
        same = names == sorted(p.name for p in dirs[1].iterdir()) and all(
            (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in names)
    return _result("determinism", 0.0 if same else 1.0, 0.0, same, f"{len(names)} files compared")


ALL_CHECKS = (
    check_sonine,
    check_kernel_asymptotics,
    check_moment_exactness,
    check_bound_state,
    check_oracles,
    check_conservation,
    check_blowup_alternative,
    check_contraction,
    check_self_convergence,
    check_determinism,
)


def run_all(checks=ALL_CHECKS, echo=print) -> list[CheckResult]:
    results = []
    for check in checks:
        res = check()
        results.append(res)
        if echo is not None:
            echo(res.line())
    return results
