"""Run configuration and the end-to-end simulation pipeline.

A configuration is a JSON object::

    {
      "coupling": {"mode": "nonlinear", "alpha": 0.0, "beta0": 1.0, "sigma": 1.0,
                   "allow_sigma_below_half": false},
      "datum": {"kind": "gaussian", "amplitude": [1.0, 0.0], "width": 1.0,
                "center": [0.0, 0.0], "charge": [0.0, 0.0], "lam": 1.0},
      "y": [0.0, 0.0],
      "T": 1.0,
      "solver": {"h": 0.001, "iteration": "damped-fixed-point", "damping": 0.5,
                 "iter_tol": 1e-13, "max_iter": 200, "blowup_threshold": 1000.0,
                 "window": 0.25, "order": "piecewise-linear"},
      "grid": {"extent": 32.0, "size": 256},
      "lambda_ref": 1.0,
      "snapshot_times": [0.0, 1.0],
      "observable_count": 11,
      "forcing_refine": 2
    }

Datum kinds: ``gaussian`` (fields as above), ``gaussian_in_domain``
(``charge``, ``width``, ``center``; amplitude fixed by the boundary
condition), ``bound_state`` (``alpha``) and ``tabulated`` (``path`` to a
CSV with columns x1,x2,re,im plus ``charge`` and ``lam``). Complex numbers
are written as [re, im] pairs. Missing keys take the defaults shown.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .charge_solver import (STATUS_COMPLETED, ChargeTrajectory, CouplingSpec, SolverOptions,
                            solve)
from .grids import SpatialGrid
from .observables import ObservableSeries, bound_state_energy, bound_state_profile, observe
from .propagator import (KIND_GAUSSIAN, InitialDatum, forcing_f, gaussian_in_domain,
                         read_tabulated)
from .specfun import DEFAULT_OPTIONS, EvalOptions
from .wavefield import reconstruct_series, write_field, write_slice

DATUM_KINDS = ("gaussian", "gaussian_in_domain", "bound_state", "tabulated")

# environment overrides for tolerances, applied on top of the config file
ENV_OVERRIDES = {
    "NLPOINT2D_REL_TOL": ("eval", "rel_tol", float),
    "NLPOINT2D_ITER_TOL": ("solver", "iter_tol", float),
    "NLPOINT2D_MAX_ITER": ("solver", "max_iter", int),
    "NLPOINT2D_BLOWUP_THRESHOLD": ("solver", "blowup_threshold", float),
}

_DATUM_DEFAULTS = {
    "gaussian": {"amplitude": [1.0, 0.0], "width": 1.0, "center": [0.0, 0.0],
                 "charge": [0.0, 0.0], "lam": 1.0},
    "gaussian_in_domain": {"charge": [1.0, 0.0], "width": 1.0, "center": None, "lam": 1.0},
    "bound_state": {"alpha": 0.0},
    "tabulated": {"path": None, "charge": [0.0, 0.0], "lam": 1.0},
}


def _pair(z) -> list[float]:
    if isinstance(z, (list, tuple)):
        if len(z) != 2:
            raise ValueError(f"complex values are [re, im] pairs, got {z!r}")
        return [float(z[0]), float(z[1])]
    z = complex(z)
    return [z.real, z.imag]


def _complex(pair) -> complex:
    re, im = _pair(pair)
    return complex(re, im)


@dataclass
class SimulationConfig:
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    datum: dict = field(default_factory=lambda: {"kind": "gaussian", **_DATUM_DEFAULTS["gaussian"]})
    y: tuple[float, float] = (0.0, 0.0)
    T: float = 1.0
    solver: SolverOptions = field(default_factory=SolverOptions)
    grid: SpatialGrid = field(default_factory=SpatialGrid)
    lambda_ref: float = 1.0
    snapshot_times: list[float] = field(default_factory=list)
    observable_count: int = 11
    forcing_refine: int = 2
    eval: EvalOptions = DEFAULT_OPTIONS

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if any(t < 0 or t > self.T for t in self.snapshot_times):
            raise ValueError("snapshot times must lie in [0, T]")
        if self.observable_count < 2:
            raise ValueError("observable_count must be at least 2")
        if self.solver.blowup_threshold <= abs(self.build_datum().charge):
            raise ValueError("blowup_threshold must exceed |q0|")

    # ---- serialisation ---------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, *, allow_sigma_below_half: bool = False) -> "SimulationConfig":
        raw = copy.deepcopy(raw)
        cp = dict(raw.get("coupling", {}))
        if allow_sigma_below_half:
            cp["allow_sigma_below_half"] = True
        coupling = CouplingSpec(**cp)
        datum = _normalise_datum(raw.get("datum", {"kind": "gaussian"}))
        solver = SolverOptions(**raw.get("solver", {}))
        grid = SpatialGrid(**raw.get("grid", {}))
        ev = EvalOptions(**raw.get("eval", {}))
        return cls(
            coupling=coupling,
            datum=datum,
            y=tuple(float(v) for v in raw.get("y", (0.0, 0.0))),
            T=float(raw.get("T", 1.0)),
            solver=solver,
            grid=grid,
            lambda_ref=float(raw.get("lambda_ref", 1.0)),
            snapshot_times=[float(t) for t in raw.get("snapshot_times", [])],
            observable_count=int(raw.get("observable_count", 11)),
            forcing_refine=int(raw.get("forcing_refine", 2)),
            eval=ev,
        )

    def to_dict(self) -> dict:
        return {
            "coupling": self.coupling.to_dict(),
            "datum": copy.deepcopy(self.datum),
            "y": list(self.y),
            "T": self.T,
            "solver": self.solver.to_dict(),
            "grid": {"extent": self.grid.extent, "size": self.grid.size},
            "lambda_ref": self.lambda_ref,
            "snapshot_times": list(self.snapshot_times),
            "observable_count": self.observable_count,
            "forcing_refine": self.forcing_refine,
            "eval": asdict(self.eval),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path, *, allow_sigma_below_half: bool = False, env=None) -> "SimulationConfig":
        raw = json.loads(Path(path).read_text())
        raw = apply_env_overrides(raw, os.environ if env is None else env)
        return cls.from_dict(raw, allow_sigma_below_half=allow_sigma_below_half)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    # ---- construction ------------------------------------------------------

    def build_datum(self) -> InitialDatum:
        d = self.datum
        kind = d["kind"]
        if kind == "gaussian":
            return InitialDatum(KIND_GAUSSIAN, amplitude=_complex(d["amplitude"]), width=d["width"],
                                center=tuple(d["center"]), charge=_complex(d["charge"]), lam=d["lam"])
        if kind == "gaussian_in_domain":
            c = self.coupling
            center = tuple(d["center"]) if d.get("center") is not None else tuple(self.y)
            kwargs = ({"alpha": c.alpha} if c.mode == "linear"
                      else {"beta0": c.beta0, "sigma": c.sigma})
            datum = gaussian_in_domain(_complex(d["charge"]), d["width"], self.y, lam=d["lam"], **kwargs)
            if center != tuple(self.y):
                raise ValueError("gaussian_in_domain data are centred at y")
            return datum
        if kind == "bound_state":
            return bound_state_profile(d["alpha"], y=self.y)
        return read_tabulated(d["path"], charge=_complex(d["charge"]), lam=d["lam"])


def _normalise_datum(raw: dict) -> dict:
    kind = raw.get("kind", "gaussian")
    if kind not in DATUM_KINDS:
        raise ValueError(f"unknown datum kind {kind!r}")
    out = {"kind": kind, **copy.deepcopy(_DATUM_DEFAULTS[kind])}
    unknown = set(raw) - set(out)
    if unknown:
        raise ValueError(f"unknown keys for {kind} datum: {sorted(unknown)}")
    out.update(copy.deepcopy(raw))
    for key in ("amplitude", "charge"):
        if key in out:
            out[key] = _pair(out[key])
    for key in ("width", "lam", "alpha"):
        if key in out:
            out[key] = float(out[key])
    if out.get("center") is not None:
        out["center"] = [float(v) for v in out["center"]]
    if kind == "tabulated" and not out.get("path"):
        raise ValueError("tabulated data need a 'path'")
    return out


def apply_env_overrides(raw: dict, env) -> dict:
    raw = copy.deepcopy(raw)
    for var, (section, key, conv) in ENV_OVERRIDES.items():
        if var in env and env[var] != "":
            raw.setdefault(section, {})[key] = conv(env[var])
    return raw


# --------------------------------------------------------------------------
# pipeline


@dataclass
class SimulationResult:
    config: SimulationConfig
    trajectory: ChargeTrajectory
    observables: ObservableSeries
    metrics: dict
    files: dict = field(default_factory=dict)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_simulation(config: SimulationConfig, out_dir=None) -> SimulationResult:
    """Forcing, charge solve, reconstruction and observables for one config.

    When ``out_dir`` is given every artefact is written there together with
    ``manifest.json`` listing each file with its sha256 digest.
    """
    datum = config.build_datum()
    forcing = forcing_f(datum, config.y, config.T, config.solver.h,
                        refine=config.forcing_refine, order=config.solver.order,
                        options=config.eval)
    traj = solve(config.coupling, forcing, datum.charge, config.solver, config.eval)

    t_end = traj.t_max if traj.status != STATUS_COMPLETED else config.T
    obs_times = np.linspace(0.0, t_end, config.observable_count)
    snap_times = [t for t in config.snapshot_times if t <= t_end + 1e-12]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        snaps = reconstruct_series(traj, datum, config.y, obs_times, config.grid, config.lambda_ref)
        series = observe(snaps, config.coupling)
        extra = (reconstruct_series(traj, datum, config.y, snap_times, config.grid, config.lambda_ref)
                 if snap_times else [])
    notes = sorted({str(w.message) for w in caught})

    q0 = traj.q[0]
    metrics = {
        "mass_drift": series.relative_drift("M"),
        "energy_drift": series.relative_drift("E"),
        "max_boundary_residual": float(np.max(np.abs(series.boundary_residual))),
        "final_abs_q": float(abs(traj.q[-1])),
        "accuracy_warnings": notes,
    }
    if abs(q0) > 0:
        metrics["max_modulus_deviation"] = float(np.max(np.abs(np.abs(traj.q) / abs(q0) - 1)))
    if config.datum["kind"] == "bound_state":
        e_b = bound_state_energy(config.datum["alpha"])
        phase = np.unwrap(np.angle(traj.q)) - np.angle(q0) + e_b * traj.grid
        metrics["max_phase_deviation"] = float(np.max(np.abs(phase)))

    result = SimulationResult(config, traj, series, metrics)
    if out_dir is not None:
        _write_outputs(result, forcing, extra, Path(out_dir))
    return result


def _write_outputs(result: SimulationResult, forcing, snapshots, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    (out / "config.json").write_text(result.config.to_json() + "\n")
    files["config.json"] = out / "config.json"
    files["trajectory.csv"] = result.trajectory.write_csv(out / "trajectory.csv")
    files["forcing.csv"] = forcing.write_csv(out / "forcing.csv")
    files["observables.csv"] = result.observables.write_csv(out / "observables.csv")
    for snap in snapshots:
        tag = f"{snap.t:.6f}"
        files[f"field_t{tag}.npz"] = write_field(out / f"field_t{tag}.npz", snap)
        files[f"slice_t{tag}.csv"] = write_slice(out / f"slice_t{tag}.csv", snap)
    traj_meta = result.trajectory.metadata()
    (out / "trajectory.json").write_text(json.dumps(traj_meta, indent=2, sort_keys=True) + "\n")
    files["trajectory.json"] = out / "trajectory.json"
    result.files = {name: _sha256(p) for name, p in sorted(files.items())}
    manifest = {
        "config_sha256": result.config.digest(),
        "versions": _versions(),
        "status": result.trajectory.status,
        "t_star_estimate": result.trajectory.t_star_estimate,
        "metrics": result.metrics,
        "files": result.files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _versions() -> dict:
    import platform

    import scipy

    from . import __version__

    return {"nlpoint2d": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}
