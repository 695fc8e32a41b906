"""Regenerate tests/fixtures/*.json from the independent oracles.

    python -m tests.oracles.make_fixtures

The grids here must match the ones the tests and the ``taylor`` command use.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import independent as oracle

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

REGIME_NS = (10**3, 10**4, 10**5, 10**6)
REGIME_GAMMAS = (0.1, 0.3, 0.45)
REGIME_MS = (1, 2, 3, 5)

TAYLOR_D_GRID = [float(v) for v in np.unique(np.round(np.geomspace(2.0, 1e6, 40)))]
TAYLOR_N_GRID = [float(v) for v in np.geomspace(10.0, 1e12, 12)]
TAYLOR_R_GRID = (1.0, 2.0, 3.0)
TAYLOR_F_FAMILIES = {
    "zero": lambda d: 0.0,
    "inv_d2": lambda d: 1.0 / d**2,
    "log_d2": lambda d: math.log(d) / d**2,
}
TAYLOR_F_GRID = [float(v) for v in np.linspace(0.0, 1.0, 41)]
TAYLOR_M_GRID = (1, 2, 3)


def implicit_d() -> dict:
    rows = []
    for n in REGIME_NS:
        for g in REGIME_GAMMAS:
            for m in REGIME_MS:
                d = oracle.implicit_d_bisection(n, g, m)
                lo = (2 * m * n**g) ** (1 / m)
                hi = lo * math.log(n) ** (1 / m)
                rows.append({
                    "n": n, "gamma": g, "m": m, "d": d,
                    "in_bracket": d is not None and lo <= d <= hi,
                })
    extra = {
        # n^gamma = 10 with m = 1: d = 20 log d
        "n_gamma_10_m1": oracle.implicit_d_bisection(10**10, 0.1, 1),
        "n1e4_g03_m2": oracle.implicit_d_bisection(10**4, 0.3, 2),
    }
    return {"grid": rows, "examples": extra}


def taylor() -> dict:
    d_grid = TAYLOR_D_GRID
    pd = {}
    for d in d_grid:
        pd[d] = all(
            oracle.power_decay_holds(d, r, f(d)) for r in TAYLOR_R_GRID for f in TAYLOR_F_FAMILIES.values()
        )
    bl = {d: all(oracle.bernoulli_lower_holds(d, f) for f in TAYLOR_F_GRID) for d in d_grid}
    bu = all(oracle.bernoulli_upper_holds(d, f(d)) for d in d_grid for f in TAYLOR_F_FAMILIES.values())
    ssc = {n: all(oracle.ssc_identity_holds(n, m) for m in TAYLOR_M_GRID) for n in TAYLOR_N_GRID}
    return {
        "d_grid": d_grid,
        "n_grid": TAYLOR_N_GRID,
        "power_decay_threshold": oracle.threshold(d_grid, pd),
        "power_decay_failing_d": [d for d in d_grid if not pd[d]],
        "bernoulli_lower_all_hold": all(bl.values()),
        "bernoulli_upper_all_hold": bu,
        "ssc_identity_threshold": oracle.threshold(TAYLOR_N_GRID, ssc),
        "ssc_identity_failing_n": [n for n in TAYLOR_N_GRID if not ssc[n]],
    }


def chain() -> dict:
    lam = Fraction(3, 2)
    pi = oracle.stationary_fractions(2, 2, 2, lam)
    return {
        "tail_instance": {
            "n": 2, "b": 2, "d": 2, "lambda": 1.5,
            "states": [list(s) for s in pi],
            "probs": [float(p) for p in pi.values()],
            "probs_exact": [f"{p.numerator}/{p.denominator}" for p in pi.values()],
        },
        "mm1b": {"n": 1, "b": 5, "lambda": 0.5, "busy": float(oracle.mm1b_busy(Fraction(1, 2), 5))},
    }


def fluid() -> dict:
    x = oracle.closed_form_fixed_point(100, 90, 2, 12)
    return {"n": 100, "lambda": 90, "d": 2, "b": 12, "closed_form": x}


def ratio() -> dict:
    d = oracle.implicit_d_bisection(10**6, 0.3, 2)
    return {
        "n": 10**6, "gamma": 0.3, "m": 2, "d": d,
        "ratio": oracle.lower_ratio_terms(10**6, 0.3, 2, d),
        "ratio_i2": oracle.lower_ratio_terms(10**6, 0.3, 2, d, i=2),
    }


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    out = {
        "implicit_d.json": implicit_d(),
        "taylor_thresholds.json": taylor(),
        "chain.json": chain(),
        "fluid.json": fluid(),
        "ratio.json": ratio(),
    }
    for name, data in out.items():
        (FIXTURES / name).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        print("wrote", FIXTURES / name)


if __name__ == "__main__":
    main()
