"""Command-line entry point: ``podsim <command> --config PATH --out DIR``.

Every command computes its results in memory and writes them only when it
has succeeded, so a failed run leaves no partial outputs. Primary outputs
are deterministic given the config and seed; ``run_info.json`` carries the
timestamp and is not.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, bounds, ctmc, fluid, lyapunov, stats
from ._io import csv_text, json_text, metadata, write_all
from .core import (
    ROUNDING_MODES,
    ConfigError,
    ConvergenceError,
    StateError,
    SystemConfig,
    config_from_dict,
    solve_implicit_d,
)

COMMANDS = ("simulate", "exact", "ode", "fixedpoint", "regime", "bounds", "driftscan", "taylor", "sweep")
OUT_ENV = "PODSIM_OUT"
DEFAULT_OUT = "podsim_out"
DEFAULT_EVENTS = 1_000_000

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


@dataclass
class ExperimentPlan:
    command: str
    config_path: str | None
    out_dir: str
    reps: int = 1
    seed: int | None = None
    options: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.reps < 1:
            raise ConfigError("replications must be >= 1")
        if self.seed is not None and not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        out = Path(self.out_dir)
        if out.exists() and not out.is_dir():
            raise ConfigError(f"output path {out} is not a directory")
        probe = out if out.exists() else next((p for p in out.parents if p.exists()), Path("."))
        if not os.access(probe, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")


# ---------------------------------------------------------------------------
# config loading


def _raw_config(plan: ExperimentPlan, required: bool = True) -> dict:
    if plan.config_path is None:
        if required:
            raise ConfigError(f"{plan.command} needs --config")
        data: dict = {}
    else:
        path = Path(plan.config_path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    if plan.seed is not None:
        data["seed"] = plan.seed
    if plan.options.get("d_round") is not None:
        data["rounding"] = plan.options["d_round"]
    return data


def _system_config(plan: ExperimentPlan) -> SystemConfig:
    return config_from_dict(_raw_config(plan))


def _number(data: dict, key: str, kind=float):
    if key not in data:
        raise ConfigError(f"config needs {key}")
    v = data[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(f"{key} must be an integer")
        return int(v)
    return float(v)


def _regime_for(config: SystemConfig):
    if config.gamma is None or config.m is None:
        return None
    return solve_implicit_d(config.n, config.gamma, config.m, rounding=config.rounding, strict=False)


# ---------------------------------------------------------------------------
# commands; each returns {file name: text}


def _simulate_one(args: tuple) -> tuple[stats.SteadyStateEstimate, list[dict]]:
    config, events, horizon, rep, box, warmup, batches = args
    tr = ctmc.simulate(config, events=events, time=horizon, rep=rep, box=box)
    est = stats.estimate(tr, warmup_fraction=warmup, n_batches=batches)
    rows = []
    for k, (t, ev, s) in enumerate(zip(tr.end_times, tr.events, tr.states)):
        row = {"rep": rep, "chunk": k, "t": float(t), "events": int(ev)}
        row.update({f"s_{i}": int(v) for i, v in enumerate(s, start=1)})
        rows.append(row)
    return est, rows


def cmd_simulate(plan: ExperimentPlan) -> dict[str, str]:
    config = _system_config(plan)
    o = plan.options
    events, horizon = o.get("events"), o.get("time")
    if events is None and horizon is None:
        events = DEFAULT_EVENTS
    if events is not None and horizon is not None:
        raise ConfigError("give --events or --time, not both")
    regime = _regime_for(config)
    report = bounds.band_report(config, regime) if regime is not None else None
    box = bounds.report_to_box(report, config.b) if report is not None else None
    jobs = [(config, events, horizon, r, box, o["warmup"], o["batches"]) for r in range(plan.reps)]
    workers = min(plan.reps, o.get("jobs") or os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    ests = [r[0] for r in results]
    pooled = stats.combine(ests)
    rows = [row for r in results for row in r[1]]
    meta = metadata(config.config_hash(), config.seed, plan.command)
    columns = ["rep", "chunk", "t", "events"] + [f"s_{i}" for i in range(1, config.b + 1)]
    estimate = {"config": config.to_dict(), "pooled": pooled.to_dict(), "replications": [e.to_dict() for e in ests]}
    gamma_m = (config.gamma, config.m)
    profile = stats.occupancy_profile(pooled, *gamma_m) if None not in gamma_m else stats.occupancy_profile(pooled)
    estimate["occupancy_profile"] = profile.to_dict()
    if report is not None:
        verdict = {"available": True, "bands": report.to_dict(), "containment": stats.containment(pooled, report).to_dict()}
    else:
        verdict = {"available": False, "reason": "config has no gamma and m, so no bands"}
    return {
        "trajectory.csv": csv_text(rows, columns, meta),
        "estimate.json": json_text(estimate, meta),
        "verdict.json": json_text(verdict, meta),
    }


def cmd_exact(plan: ExperimentPlan) -> dict[str, str]:
    config = _system_config(plan)
    dist = ctmc.solve_stationary_exact(config, max_states=plan.options.get("max_states") or 200_000)
    payload = {
        "config": config.to_dict(),
        "residual": dist.residual,
        "states": [list(s) for s in dist.states],
        "probs": dist.probs,
        "tail": dist.tail_matrix(),
    }
    return {"stationary.json": json_text(payload, metadata(config.config_hash(), config.seed, plan.command))}


def cmd_ode(plan: ExperimentPlan) -> dict[str, str]:
    config = _system_config(plan)
    o = plan.options
    t_end = o.get("time") or 200.0
    points = o.get("points") or 201
    traj = fluid.integrate(np.zeros(config.b), config, t_end, rtol=o["rtol"], atol=o["atol"])
    grid = np.linspace(0.0, t_end, points)
    xs = traj.at(grid).T
    rows = []
    for t, x in zip(grid, xs):
        row = {"t": float(t)}
        row.update({f"x_{i}": float(v) for i, v in enumerate(x, start=1)})
        rows.append(row)
    columns = ["t"] + [f"x_{i}" for i in range(1, config.b + 1)]
    return {"ode.csv": csv_text(rows, columns, metadata(config.config_hash(), config.seed, plan.command))}


def cmd_fixedpoint(plan: ExperimentPlan) -> dict[str, str]:
    config = _system_config(plan)
    payload = {
        "config": config.to_dict(),
        "closed_form": fluid.fixed_point_closed_form(config).to_dict(),
        "finite_b": fluid.fixed_point_finite_b(config).to_dict(),
    }
    regime = _regime_for(config)
    if regime is not None:
        payload["plateau"] = fluid.asymptotic_plateau(regime, config).to_dict()
    return {"fixedpoint.json": json_text(payload, metadata(config.config_hash(), config.seed, plan.command))}


def cmd_regime(plan: ExperimentPlan) -> dict[str, str]:
    data = _raw_config(plan)
    n, gamma, m = _number(data, "n", int), _number(data, "gamma"), _number(data, "m", int)
    rounding = data.get("rounding", "nearest")
    sol = solve_implicit_d(n, gamma, m, rounding=rounding, strict=False)
    key = {"n": n, "gamma": gamma, "m": m, "rounding": rounding}
    return {"regime.json": json_text(sol.to_dict(), metadata(_hash(key), data.get("seed"), plan.command))}


def cmd_bounds(plan: ExperimentPlan) -> dict[str, str]:
    config = _system_config(plan)
    regime = _regime_for(config)
    if regime is None:
        raise ConfigError("bounds needs gamma and m in the config")
    report = bounds.band_report(config, regime)
    payload = {"config": config.to_dict(), "regime": regime.to_dict(), "bands": report.to_dict()}
    return {"bands.json": json_text(payload, metadata(config.config_hash(), config.seed, plan.command))}


def _parse_indices(items: Sequence[str]) -> dict[str, int]:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ConfigError(f"index {item!r} is not NAME=VALUE")
        try:
            out[name] = int(value)
        except ValueError as exc:
            raise ConfigError(f"index {item!r} needs an integer value") from exc
    return out


def cmd_driftscan(plan: ExperimentPlan) -> dict[str, str]:
    config = _system_config(plan)
    o = plan.options
    family = o.get("family") or "BaseV1"
    if family not in lyapunov.FAMILIES:
        raise ConfigError(f"family must be one of {lyapunov.FAMILIES}")
    params = lyapunov.CatalogParams.from_config(config, m=o.get("m"))
    spec = lyapunov.LyapunovSpec.make(family, params, **_parse_indices(o.get("index")))
    target = o.get("drift_target")
    report = lyapunov.drift_scan(spec, config, budget=o["scan_budget"], target=target, seed=config.seed)
    payload = {"config": config.to_dict(), "function": spec.to_dict(), "scan": report.to_dict()}
    return {"driftscan.json": json_text(payload, metadata(config.config_hash(), config.seed, plan.command))}


TAYLOR_COLUMNS = ("check", "d", "r", "f_family", "f", "n", "m", "lhs_log", "rhs_log", "holds")


def cmd_taylor(plan: ExperimentPlan) -> dict[str, str]:
    data = _raw_config(plan, required=False)
    d_max = float(data.get("d_max", 1e6))
    n_max = float(data.get("n_max", 1e12))
    if not (d_max > 2 and n_max > 10):
        raise ConfigError("taylor needs d_max > 2 and n_max > 10")
    d_grid = [float(v) for v in np.unique(np.round(np.geomspace(2.0, d_max, 40)))]
    n_grid = [float(v) for v in np.geomspace(10.0, n_max, int(round(math.log10(n_max))))]
    grids = lyapunov.taylor_checks(d_grid, n_grid=n_grid)
    rows = [{"check": name, **r} for name, g in grids.items() for r in g.rows]
    summary = {
        name: {"threshold": g.threshold, "all_hold": g.all_hold, "violations": len(g.violations_below), "points": len(g.rows)}
        for name, g in grids.items()
    }
    key = {"d_max": d_max, "n_max": n_max}
    meta = metadata(_hash(key), data.get("seed"), plan.command)
    return {"taylor.csv": csv_text(rows, TAYLOR_COLUMNS, meta), "taylor.json": json_text(summary, meta)}


def cmd_sweep(plan: ExperimentPlan) -> dict[str, str]:
    data = _raw_config(plan)
    n, gamma = _number(data, "n", int), _number(data, "gamma")
    points = plan.options.get("points") or 13
    rows = bounds.sweep_rows(n, gamma, bounds.sweep_d_grid(n, points))
    key = {"n": n, "gamma": gamma, "points": points}
    return {"sweep.csv": csv_text(rows, bounds.SWEEP_COLUMNS, metadata(_hash(key), data.get("seed"), plan.command))}


HANDLERS = {
    "simulate": cmd_simulate,
    "exact": cmd_exact,
    "ode": cmd_ode,
    "fixedpoint": cmd_fixedpoint,
    "regime": cmd_regime,
    "bounds": cmd_bounds,
    "driftscan": cmd_driftscan,
    "taylor": cmd_taylor,
    "sweep": cmd_sweep,
}


def _hash(key: dict) -> str:
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# driver


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}, sort_keys=True) + "\n")
    return code


def run(plan: ExperimentPlan, argv: Sequence[str] | None = None) -> int:
    """Execute ``plan``; returns the exit code. Files appear only on success."""
    started = time.time()
    try:
        plan.validate()
        files = HANDLERS[plan.command](plan)
    except (ConfigError, StateError, stats.InsufficientData) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_CONFIG)
    except ConvergenceError as exc:
        return _error("ConvergenceError", str(exc), EXIT_NUMERIC)
    info = {
        "command": plan.command,
        "argv": list(argv) if argv is not None else None,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "elapsed_seconds": time.time() - started,
        "kernel": ctmc.KERNEL,
        "python": platform.python_version(),
        "version": __version__,
        "outputs": sorted(files),
    }
    files = dict(files)
    files["run_info.json"] = json_text(info)
    try:
        write_all(plan.out_dir, files)
    except OSError as exc:
        return _error("OSError", str(exc), EXIT_CONFIG)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="podsim", description="Power-of-d load balancing experiments")
    p.add_argument("--version", action="version", version=f"podsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, config_required: bool = True) -> None:
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--d-round", choices=ROUNDING_MODES, default=None, help="rounding of a derived d")

    sp = sub.add_parser("simulate", help="simulate the chain and estimate steady-state quantities")
    common(sp)
    horizon = sp.add_mutually_exclusive_group()
    horizon.add_argument("--events", type=int, default=None)
    horizon.add_argument("--time", type=float, default=None)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--jobs", type=int, default=None, help="worker processes for replications")
    sp.add_argument("--warmup", type=float, default=stats.DEFAULT_WARMUP)
    sp.add_argument("--batches", type=int, default=stats.DEFAULT_BATCHES)

    sp = sub.add_parser("exact", help="exact stationary distribution for small instances")
    common(sp)
    sp.add_argument("--max-states", type=int, default=None)

    sp = sub.add_parser("ode", help="integrate the fluid ODE from the empty state")
    common(sp)
    sp.add_argument("--time", type=float, default=None, help="horizon (default 200)")
    sp.add_argument("--points", type=int, default=None, help="output grid size (default 201)")
    sp.add_argument("--rtol", type=float, default=1e-10)
    sp.add_argument("--atol", type=float, default=1e-12)

    sp = sub.add_parser("fixedpoint", help="fluid fixed points")
    common(sp)

    sp = sub.add_parser("regime", help="solve d^m = 2 m n^gamma log d")
    common(sp)

    sp = sub.add_parser("bounds", help="queue-length bands and their exponents")
    common(sp)

    sp = sub.add_parser("driftscan", help="numerical drift check of one catalog function")
    common(sp)
    sp.add_argument("--family", default="BaseV1", choices=lyapunov.FAMILIES)
    sp.add_argument("--index", action="append", default=[], metavar="NAME=VALUE", help="family index, e.g. k=2")
    sp.add_argument("--m", type=int, default=None, help="plateau m (default from config)")
    sp.add_argument("--scan-budget", type=int, default=10_000)
    sp.add_argument("--drift-target", choices=lyapunov.DRIFT_TARGETS, default=None)

    sp = sub.add_parser("taylor", help="grid checks of the expansion inequalities")
    common(sp, config_required=False)

    sp = sub.add_parser("sweep", help="regime table across a d grid at fixed n and gamma")
    common(sp)
    sp.add_argument("--points", type=int, default=13)
    return p


def plan_from_args(ns: argparse.Namespace) -> ExperimentPlan:
    out = ns.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    skip = {"command", "config", "out", "seed", "reps"}
    options = {k: v for k, v in vars(ns).items() if k not in skip}
    return ExperimentPlan(
        command=ns.command,
        config_path=ns.config,
        out_dir=out,
        reps=getattr(ns, "reps", 1),
        seed=ns.seed,
        options=options,
    )


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _error("UsageError", "invalid command-line arguments", EXIT_CONFIG)
    return run(plan_from_args(ns), argv)


if __name__ == "__main__":
    sys.exit(main())
