"""Command line entry point: ``nlpoint2d {simulate,selftest,kernel-table,sweep}``.

Exit codes: 0 completed, 1 invalid input or I/O error, 3 tolerance failure,
4 blow-up detected (a valid outcome, reported distinctly).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import specfun
from .charge_solver import STATUS_BLOWUP, STATUS_COMPLETED, STATUS_FAILED

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILURE = 3
EXIT_BLOWUP = 4

SWEEP_AXES = ("beta0", "amplitude", "sigma")

log = logging.getLogger("nlpoint2d")


def exit_code_for(status: str) -> int:
    return {STATUS_COMPLETED: EXIT_OK, STATUS_BLOWUP: EXIT_BLOWUP,
            STATUS_FAILED: EXIT_FAILURE}.get(status, EXIT_ERROR)


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(config_path, out_dir, allow_sigma_below_half: bool = False) -> int:
    from .config import SimulationConfig, run_simulation

    config = SimulationConfig.load(config_path, allow_sigma_below_half=allow_sigma_below_half)
    result = run_simulation(config, out_dir)
    traj = result.trajectory
    print(f"status={traj.status} t_max={traj.t_max:g} t_star={traj.t_star_estimate}")
    return exit_code_for(traj.status)


# --------------------------------------------------------------------------
# selftest


def cmd_selftest(out=sys.stdout) -> int:
    from .selftest import run_all

    results = run_all(echo=lambda line: print(line, file=out, flush=True))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return EXIT_OK if not failed else EXIT_FAILURE


# --------------------------------------------------------------------------
# kernel table


def cmd_kernel_table(t_min: float, t_max: float, n: int, path) -> int:
    """Log-spaced CSV with columns t, I, nu0, nu1, J."""
    if not (0 < t_min < t_max):
        raise ValueError("need 0 < t_min < t_max")
    if n < 2:
        raise ValueError("need at least two rows")
    ts = np.geomspace(t_min, t_max, n)
    I = specfun.kernel_values(ts)
    nu0 = specfun.volterra_nu(ts, 0.0)
    nu1 = specfun.volterra_nu(ts, 1.0)
    J = specfun.sonine_J(ts)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "I", "nu0", "nu1", "J"])
            for row in zip(ts, I, nu0, nu1, J):
                w.writerow([f"{v:.17g}" for v in row])
    except OSError as exc:
        raise OSError(f"cannot write kernel table to {path}: {exc}") from exc
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep


def parse_axis(text: str) -> tuple[str, list[float]]:
    """``beta0=1,2,4`` -> ("beta0", [1.0, 2.0, 4.0])."""
    if "=" not in text:
        raise ValueError("axis must look like name=v1,v2,...")
    name, _, vals = text.partition("=")
    name = name.strip()
    if name not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
    values = [float(v) for v in vals.split(",") if v.strip()]
    if not values:
        raise ValueError("sweep axis is empty")
    return name, values


def _point_config(base: dict, name: str, value: float) -> dict:
    raw = copy.deepcopy(base)
    if name in ("beta0", "sigma"):
        raw.setdefault("coupling", {})[name] = value
        raw["coupling"]["mode"] = "nonlinear"
    else:
        datum = raw.setdefault("datum", {"kind": "gaussian"})
        if datum.get("kind", "gaussian") != "gaussian":
            raise ValueError("the amplitude axis needs a gaussian datum")
        datum["amplitude"] = [value, 0.0]
    return raw


def _run_point(args) -> dict:
    raw, out_dir, allow, name, value = args
    from .config import SimulationConfig, run_simulation

    row = {"parameter": name, "value": value, "status": "error", "t_star_estimate": "",
           "final_abs_q": "", "exit_code": EXIT_ERROR}
    try:
        config = SimulationConfig.from_dict(raw, allow_sigma_below_half=allow)
        res = run_simulation(config, out_dir)
        traj = res.trajectory
        row.update(status=traj.status,
                   t_star_estimate="" if traj.t_star_estimate is None else f"{traj.t_star_estimate:.17g}",
                   final_abs_q=f"{abs(traj.q[-1]):.17g}", exit_code=exit_code_for(traj.status))
    except Exception as exc:  # isolate per-run failures
        row["status"] = f"error: {exc}"
    return row


def cmd_sweep(config_path, axis: str, out_dir, workers: int = 1,
              allow_sigma_below_half: bool = False) -> int:
    from .config import apply_env_overrides
    import os

    name, values = parse_axis(axis)
    base = apply_env_overrides(json.loads(Path(config_path).read_text()), os.environ)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, v in enumerate(values):
        if name == "sigma" and v < 0.5 and not allow_sigma_below_half:
            raise ValueError("sigma < 1/2 needs --allow-sigma-below-half")
        run_dir = out / f"run_{i:03d}_{name}={v:g}"
        jobs.append((_point_config(base, name, v), run_dir, allow_sigma_below_half, name, v))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["parameter", "value", "status", "t_star_estimate",
                                           "final_abs_q", "exit_code"])
        w.writeheader()
        for row in rows:
            w.writerow({**row, "value": f"{row['value']:.17g}"})
    for row in rows:
        print(f"{name}={row['value']:g}: {row['status']} t_star={row['t_star_estimate'] or '-'}")
    return EXIT_OK if all(r["exit_code"] in (EXIT_OK, EXIT_BLOWUP) for r in rows) else EXIT_FAILURE


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlpoint2d", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one configuration")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--allow-sigma-below-half", action="store_true")

    sub.add_parser("selftest", help="run the release checks")

    kt = sub.add_parser("kernel-table", help="tabulate I, nu(.,0), nu(.,1) and J")
    kt.add_argument("--t-min", type=float, default=1e-4)
    kt.add_argument("--t-max", type=float, default=10.0)
    kt.add_argument("-n", type=int, default=50)
    kt.add_argument("--out", required=True, type=Path)

    sw = sub.add_parser("sweep", help="run a configuration over one parameter axis")
    sw.add_argument("--config", required=True, type=Path)
    sw.add_argument("--axis", required=True, help="e.g. beta0=1,2,4 or amplitude=0.1,0.2")
    sw.add_argument("--out", required=True, type=Path)
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--allow-sigma-below-half", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.allow_sigma_below_half)
        if args.command == "selftest":
            return cmd_selftest()
        if args.command == "kernel-table":
            return cmd_kernel_table(args.t_min, args.t_max, args.n, args.out)
        return cmd_sweep(args.config, args.axis, args.out, args.workers, args.allow_sigma_below_half)
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
