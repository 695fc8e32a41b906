"""Acceptance criteria, one PASS/FAIL line each in the session summary.

Parts that cannot hold are strict xfails: the line still says FAIL and the
assertion is kept, so an unexpected pass breaks the run.
"""

import itertools
import json
import math
import sys
import time

import numpy as np
import pytest

from podsim import bounds, cli, ctmc, fluid, lyapunov, stats
from podsim.core import (
    ConvergenceError,
    StateVector,
    SystemConfig,
    heavy_traffic_lambda,
    infer_m,
    solve_implicit_d,
)

from .conftest import ACCEPTANCE_LINES, load_fixture
from .oracles import independent as oracle

GRID_N = (10**3, 10**4, 10**5, 10**6)
GRID_GAMMA = (0.1, 0.3, 0.45)
GRID_M = (1, 2, 3, 5)


def record(k: int, part: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.setdefault(k, []).append((part, bool(ok), detail))


def solved_config(n, gamma, m, b, seed=0):
    sol = solve_implicit_d(n, gamma, m, strict=False)
    c = SystemConfig(n=n, b=b, lam=heavy_traffic_lambda(n, gamma), d=sol.d_int, gamma=gamma, m=m,
                     d_real=sol.d_real, seed=seed, allow_d_gt_n=True)
    return c, sol


# 1. simulation against the exact stationary law


def test_c1_simulation_matches_exact_law():
    start = time.time()
    worst_z = worst_abs = slowest = 0.0
    failures = []
    comparisons = 0
    for n, b, d in itertools.product(range(1, 4), range(1, 4), range(1, 4)):
        for frac in (0.5, 0.8):
            t0 = time.time()
            c = SystemConfig(n=n, b=b, lam=frac * n, d=d, seed=0, allow_d_gt_n=True)
            est = stats.estimate(ctmc.simulate(c, events=10**7, hist=True))
            tail = ctmc.solve_stationary_exact(c).tail_matrix()
            for i in range(1, b + 1):
                for k in range(1, n + 1):
                    p, se = est.at_least(i, k)
                    err = abs(p - tail[i - 1, k])
                    z = err / se if se > 0 else (0.0 if err == 0 else math.inf)
                    comparisons += 1
                    worst_z, worst_abs = max(worst_z, z), max(worst_abs, err)
                    if z > 3 or err > 0.01:
                        failures.append((n, b, d, frac, i, k, p, float(tail[i - 1, k]), se))
            slowest = max(slowest, time.time() - t0)
    ok = not failures and slowest < 120
    record(1, "54 configs, 1e7 events each", ok,
           f"{comparisons} comparisons, max |z| {worst_z:.2f}, max abs err {worst_abs:.1e}, "
           f"slowest config {slowest:.1f}s, total {time.time() - start:.0f}s")
    assert not failures, failures[:5]
    assert slowest < 120


# 2. M/M/1/b


def test_c2_single_server_busy_probability():
    busy = load_fixture("chain.json")["mm1b"]["busy"]
    start = time.time()
    got = {}
    for d in (1, 2, 3):
        c = SystemConfig(n=1, b=5, lam=0.5, d=d, seed=2, allow_d_gt_n=True)
        est = stats.estimate(ctmc.simulate(c, events=2 * 10**6, hist=True))
        got[d] = est.at_least(1, 1)[0]
    elapsed = time.time() - start
    ok = all(abs(v - busy) <= 0.005 for v in got.values()) and elapsed < 30
    record(2, "P(queue >= 1)", ok,
           ", ".join(f"d={d}: {v:.5f}" for d, v in got.items()) + f" vs {busy:.5f}, {elapsed:.1f}s")
    assert ok


# 3. per-queue chain induces the aggregate generator


def test_c3_generator_equivalence():
    from fractions import Fraction

    checked = 0
    mismatches = []
    for n, b, d in itertools.product(range(1, 5), range(1, 4), range(1, 4)):
        c = SystemConfig(n=n, b=b, lam=0.75 * n, d=d, allow_d_gt_n=True)
        for s in ctmc.enumerate_states(n, b):
            lengths = [sum(1 for v in s if v > j) for j in range(n)]
            induced = ctmc.per_queue_induced_rates(lengths, c)
            row = {nxt.s: r for nxt, r in ctmc.generator_row(StateVector(n, s), c, exact=True)}
            ref = oracle.per_queue_rates(s, n, b, d, Fraction(3, 4) * n)
            checked += 1
            if induced != row or induced != ref:
                mismatches.append((n, b, d, s))
    record(3, "exact rational rates", not mismatches, f"{checked} states, {len(mismatches)} mismatches")
    assert not mismatches


# 4. fluid limit

C4 = SystemConfig(n=100, b=12, lam=90.0, d=2)


def test_c4_fixed_point_residual_and_value():
    start = time.time()
    fp = fluid.fixed_point_closed_form(C4)
    res = float(np.max(np.abs(fluid.rhs(fp.x_star, C4)[:-1])))
    ok = res <= 1e-10 and abs(fp.x_star[1] - 72.9) < 1e-9
    record(4, "rhs at closed form and s_2", ok, f"max |rhs| {res:.1e}, s_2 {fp.x_star[1]:.10g}, {time.time() - start:.2f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="slowest mode decays at rate 0.0755; distance at t=200 is 8.1e-6")
def test_c4_reaches_fixed_point_by_t200():
    start = time.time()
    target = fluid.fixed_point_closed_form(C4).x_star
    tr = fluid.integrate(np.zeros(12), C4, 200.0, rtol=1e-12, atol=1e-12)
    dist = float(np.max(np.abs(tr.x[-1] - target)))
    record(4, "within 1e-6 by t=200", dist < 1e-6, f"distance {dist:.2e}, {time.time() - start:.1f}s")
    assert dist < 1e-6


# 5. implicit d


def grid_solutions():
    for n, gamma, m in itertools.product(GRID_N, GRID_GAMMA, GRID_M):
        yield n, gamma, m, solve_implicit_d(n, gamma, m, strict=False)


def test_c5_residual_and_round_trip():
    fx = {(g["n"], g["gamma"], g["m"]): g["d"] for g in load_fixture("implicit_d.json")["grid"]}
    worst = 0.0
    bad = []
    for n, gamma, m, sol in grid_solutions():
        worst = max(worst, sol.residual)
        if sol.residual > 1e-12 or not math.isclose(sol.d_real, fx[(n, gamma, m)], rel_tol=1e-10):
            bad.append((n, gamma, m, "residual"))
        if infer_m(n, gamma, sol.d_real).m_int != m:
            bad.append((n, gamma, m, "infer_m"))
    record(5, "residual and infer_m", not bad, f"48 points, max residual {worst:.1e}, {len(bad)} failures")
    assert not bad


@pytest.mark.xfail(strict=True, reason="largest root falls below the bracket when log(2m) + gamma log n < m")
def test_c5_bracket_containment():
    outside = [(n, gamma, m) for n, gamma, m, sol in grid_solutions() if not sol.bracket_lo <= sol.d_real <= sol.bracket_hi]
    expected = {(g["n"], g["gamma"], g["m"]) for g in load_fixture("implicit_d.json")["grid"] if not g["in_bracket"]}
    assert set(outside) == expected
    record(5, "bracket containment", not outside, f"{len(outside)} of 48 points outside: {outside}")
    assert not outside


# 6. band experiment


@pytest.fixture(scope="module")
def band_point():
    c, sol = solved_config(10**5, 0.25, 1, b=8)
    report = bounds.band_report(c, sol)
    start = time.time()
    tr = ctmc.simulate(c, events=10**8, box=bounds.report_to_box(report, c.b))
    est = stats.estimate(tr)
    return c, report, est, time.time() - start


def test_c6_joint_containment(band_point):
    c, report, est, elapsed = band_point
    v = stats.containment(est, report)
    ok = v.joint >= 0.95 and elapsed < 1800
    record(6, "m=1 joint containment", ok, f"d={c.d}, joint {v.joint:.4f} +- {v.joint_stderr:.1e}, {elapsed:.0f}s")
    assert ok


def test_c6_queues_at_least_two(band_point):
    c, report, est, _ = band_point
    f2 = stats.occupancy_profile(est, 0.25, 1).fractions[1]
    limit = 2 * report.s_mplus1_upper / c.n
    note = ", bound exceeds 1 below the asymptotic threshold" if limit >= 1 else ""
    record(6, "length >= 2 fraction", f2 <= limit, f"{f2:.2e} <= {limit:.2e}{note}")
    assert f2 <= limit


@pytest.fixture(scope="module")
def plateau_point():
    c, sol = solved_config(10**5, 0.2, 2, b=8, seed=1)
    return c, stats.estimate(ctmc.simulate(c, events=10**8))


@pytest.mark.xfail(strict=True, reason="s_2 <= s_1 and mean(s_1) < lambda = 0.9n, so mean(s_2)/n >= 0.9 is impossible")
def test_c6_plateau_at_two(plateau_point):
    c, est = plateau_point
    f2 = est.means[1] / c.n
    record(6, "m=2 mean(s_2)/n >= 0.9", f2 >= 0.9, f"{f2:.3f}, mean(s_1)/n {est.means[0] / c.n:.3f}")
    assert f2 >= 0.9


def test_c6_nothing_above_plateau(plateau_point):
    c, est = plateau_point
    f3 = est.means[2] / c.n
    record(6, "m=2 mean(s_3)/n <= 0.1", f3 <= 0.1, f"{f3:.1e}")
    assert f3 <= 0.1


# 7. drift scans

DECADES = range(1, 16)  # drift scans stop at n <= 2**53
REPRESENTATIVES = [
    ("BaseV1", 1, {}),
    ("Lower_L", 2, dict(l=0, k=2)),
    ("Lower_W", 2, dict(l=1, k=2)),
    ("Upper_LU", 1, dict(j=1)),
    ("TailSum_U", 1, {}),
]


def scan_at(family, m, ix, e):
    n = 10**e
    try:
        c, _ = solved_config(n, 0.3, m, b=6)
    except ConvergenceError:
        return None
    spec = lyapunov.LyapunovSpec.make(family, lyapunov.CatalogParams.from_config(c), **ix)
    return lyapunov.drift_scan(spec, c, budget=2000)


@pytest.mark.parametrize("family,m,ix", REPRESENTATIVES, ids=[r[0] for r in REPRESENTATIVES])
def test_c7_drift_scan_threshold(family, m, ix):
    reports = {e: scan_at(family, m, ix, e) for e in DECADES}
    held = [e for e in DECADES if reports[e] is not None and reports[e].all_satisfied]
    first = None
    for e in reversed(DECADES):
        if e not in held:
            break
        first = e
    below = reports.get(first - 1) if first is not None else None
    ok = first is not None and first > DECADES[0] and below is not None and not below.all_satisfied
    if ok and family == "BaseV1":
        ok = below.empty_region or bool(below.counterexamples)
    elif ok:
        ok = bool(below.counterexamples)
    what = "empty region" if below is not None and below.empty_region else (
        f"{len(below.counterexamples)} counterexamples" if below is not None else "none")
    label = family + "".join(f" {k}={v}" for k, v in ix.items()) + f" m={m}"
    record(7, label, ok, f"holds from n=1e{first}, n=1e{first - 1 if first else '?'}: {what}")
    assert ok
    assert reports[first].fraction_satisfying == 1.0 and reports[first].n == 10**first


# 8. tail bound on the exact chain


def test_c8_tail_bound_exact():
    c = SystemConfig(n=2, b=2, lam=1.5, d=2)
    chk = lyapunov.exact_tail_check(c, lambda s: s.s[1], js=range(1, 21))
    record(8, "j = 1..20", chk.holds,
           f"B={chk.B:g}, gamma_drift={chk.gamma_drift:g}, nu_max={chk.nu_max:g}, q_max={chk.q_max:g}")
    assert chk.holds and len(chk.rows) == 20


# 9. Taylor-type grids


def test_c9_taylor_grids():
    fx = load_fixture("taylor_thresholds.json")
    g = lyapunov.taylor_checks(fx["d_grid"], n_grid=fx["n_grid"])
    lower_ok = g["bernoulli_lower"].all_hold and fx["bernoulli_lower_all_hold"]
    pd_ok = g["power_decay"].threshold == fx["power_decay_threshold"]
    ssc_ok = g["ssc_identity"].threshold == fx["ssc_identity_threshold"]
    ok = lower_ok and pd_ok and ssc_ok
    record(9, "grids", ok,
           f"lower bound {len(g['bernoulli_lower'].rows)}/{len(g['bernoulli_lower'].rows)} hold, "
           f"power decay from d={g['power_decay'].threshold:g}, identity from n={g['ssc_identity'].threshold:g} "
           "(thresholds match fixture)")
    assert ok


# 10. lower-order ratio


def test_c10_ratio_monotone_beyond_threshold():
    bad = []
    thresholds = {}
    for gamma, m in itertools.product(GRID_GAMMA, GRID_M):
        vals = []
        for n in GRID_N:
            d = solve_implicit_d(n, gamma, m, strict=False).d_real
            r = bounds.lower_order_ratio(n, gamma, m, d)
            ref = oracle.lower_ratio_terms(n, gamma, m, d)
            if not math.isclose(r, ref, rel_tol=1e-10):
                bad.append((n, gamma, m, r, ref))
            vals.append(r)
        thr = bounds.monotone_threshold(list(GRID_N), vals)
        thresholds[(gamma, m)] = thr
        tail = vals[list(GRID_N).index(thr):]
        if any(a <= b for a, b in zip(tail, tail[1:])):
            bad.append((gamma, m, "not decreasing"))
    record(10, "monotone beyond threshold", not bad,
           f"thresholds by (gamma, m): {', '.join(f'{k}: {v:.0e}' for k, v in thresholds.items())}")
    assert not bad


@pytest.mark.xfail(strict=True, reason="direct evaluation at n=1e6, gamma=0.3, m=2 gives 13.6")
def test_c10_ratio_small_at_1e6():
    fx = load_fixture("ratio.json")
    r = bounds.lower_order_ratio(fx["n"], fx["gamma"], fx["m"], fx["d"])
    record(10, "ratio < 0.1 at (1e6, 0.3, 2)", r < 0.1, f"ratio {r:.4f}, oracle {fx['ratio']:.4f}")
    assert r < 0.1


# 11. determinism

C11 = [
    ("simulate", {"n": 200, "b": 5, "gamma": 0.3, "m": 1, "seed": 11}, ["--events", "200000", "--reps", "2"]),
    ("exact", {"n": 3, "b": 3, "lambda": 2.4, "d": 2}, []),
    ("ode", {"n": 100, "b": 12, "lambda": 90.0, "d": 2}, []),
    ("fixedpoint", {"n": 100, "b": 12, "lambda": 90.0, "d": 2}, []),
    ("regime", {"n": 10000, "gamma": 0.3, "m": 2}, []),
    ("bounds", {"n": 100000, "b": 8, "gamma": 0.25, "m": 1}, []),
    ("driftscan", {"n": 10**7, "b": 6, "gamma": 0.3, "m": 1, "seed": 4}, ["--family", "TailSum_U", "--scan-budget", "500"]),
    ("taylor", {}, []),
    ("sweep", {"n": 10**12, "gamma": 0.3}, []),
]


def test_c11_determinism(tmp_path):
    differing = []
    for command, data, extra in C11:
        cfg = tmp_path / f"{command}.json"
        cfg.write_text(json.dumps(data))
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"{command}_{run}"
            assert cli.main([command, "--config", str(cfg), "--out", str(out), *extra]) == 0, command
            outs.append(out)
        for f in sorted(outs[0].iterdir()):
            if f.name != "run_info.json" and f.read_bytes() != (outs[1] / f.name).read_bytes():
                differing.append(f"{command}/{f.name}")
    record(11, "byte-identical reruns", not differing, f"{len(C11)} commands, differing: {differing or 'none'}")
    assert not differing


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
