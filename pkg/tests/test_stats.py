import numpy as np
import pytest

from podsim import bounds, stats
from podsim.core import SystemConfig, heavy_traffic_lambda, solve_implicit_d
from podsim.ctmc import simulate, solve_stationary_exact

SMALL = SystemConfig(n=3, b=3, lam=2.5, d=2, seed=7)


@pytest.fixture(scope="module")
def small_run():
    return simulate(SMALL, events=200_000, hist=True)


def test_too_few_batches(small_run):
    with pytest.raises(stats.InsufficientData):
        stats.estimate(small_run, n_batches=4)
    with pytest.raises(stats.InsufficientData):
        stats.estimate(small_run, warmup_fraction=1.0)
    with pytest.raises(stats.InsufficientData):
        stats.estimate(small_run, n_batches=10_000)


def test_means_match_exact_chain(small_run):
    est = stats.estimate(small_run)
    exact = solve_stationary_exact(SMALL)
    for i in range(3):
        ref = exact.expectation(lambda s, i=i: s[i])
        assert abs(est.means[i] - ref) < 4 * est.means_stderr[i] + 1e-3
    tail = exact.tail_matrix()
    for i in range(1, 4):
        for k in range(1, 4):
            p, se = est.at_least(i, k)
            assert abs(p - tail[i - 1, k]) < 4 * se + 1e-3


def test_tail_accessors(small_run):
    est = stats.estimate(small_run)
    assert est.at_least(1, 0) == (1.0, 0.0)
    assert est.at_least(1, 99) == (0.0, 0.0)
    p, _ = est.at_least(2, 2)
    q, _ = est.at_most(2, 1)
    assert p + q == pytest.approx(1.0)


def test_throughput_identity(small_run):
    est = stats.estimate(small_run)
    assert abs(est.throughput_gap) < 3 * est.throughput_gap_stderr


def test_stderr_shrinks_with_length():
    c = SystemConfig(n=20, b=4, lam=16.0, d=2, seed=3)
    short = stats.estimate(simulate(c, events=100_000))
    long = stats.estimate(simulate(c, events=400_000))
    ratio = long.means_stderr[0] / short.means_stderr[0]
    assert 0.3 <= ratio <= 0.8


def test_means_are_monotone(small_run):
    est = stats.estimate(small_run)
    assert np.all(np.diff(est.means) <= 0)


def test_zero_trajectory_gives_zero_fractions():
    c = SystemConfig(n=3, b=2, lam=0.0, d=2, test_mode=True)
    est = stats.estimate(simulate(c, time=100.0))
    assert np.all(est.means == 0)
    prof = stats.occupancy_profile(est)
    assert np.all(prof.fractions == 0) and prof.busy_fraction == 0.0


def test_combine_is_order_independent():
    runs = [stats.estimate(simulate(SMALL, events=50_000, rep=r)) for r in range(3)]
    a = stats.combine(runs)
    b = stats.combine(runs[::-1])
    assert np.allclose(a.means, b.means, rtol=1e-13)
    assert np.allclose(a.means_stderr, b.means_stderr, rtol=1e-13)
    assert a.reps == 3 and a.events == sum(r.events for r in runs)
    assert np.all(a.means_stderr < max(r.means_stderr.max() for r in runs))
    with pytest.raises(stats.InsufficientData):
        stats.combine([])
    other = stats.estimate(simulate(SMALL.replace(lam=2.0), events=50_000))
    with pytest.raises(stats.InsufficientData):
        stats.combine([runs[0], other])


def band_setup(n=10**4, gamma=0.25, m=1, b=4):
    sol = solve_implicit_d(n, gamma, m)
    c = SystemConfig(n=n, b=b, lam=heavy_traffic_lambda(n, gamma), d=sol.d_int, gamma=gamma, m=m,
                     d_real=sol.d_real, seed=1)
    return c, bounds.band_report(c, sol)


def test_containment_requires_matching_box():
    c, rep = band_setup()
    plain = simulate(c, events=50_000)
    with pytest.raises(stats.InsufficientData):
        stats.containment(plain, rep)


def test_containment_verdict():
    c, rep = band_setup()
    box = bounds.report_to_box(rep, c.b)
    tr = simulate(c, events=200_000, box=box)
    v = stats.containment(tr, rep)
    assert 0.0 <= v.joint <= 1.0
    assert len(v.per_band) == 1 and v.s_mplus1 is not None and v.tail is not None
    assert v.joint <= min(v.per_band + [v.s_mplus1, v.tail]) + 1e-12
    assert v.sub_threshold == rep.sub_threshold
    assert v.log_violation_bound < 0
    assert set(v.to_dict()) >= {"joint", "exceeds_bound", "notes"}


def test_occupancy_profile_prediction():
    c, rep = band_setup()
    est = stats.estimate(simulate(c, events=100_000))
    prof = stats.occupancy_profile(est, gamma=0.25, m=1)
    assert prof.predicted_shorter_than[0] == pytest.approx(c.n**-0.25)
    assert np.allclose(prof.exactly.sum(), prof.fractions[0])
    assert prof.load == pytest.approx(c.lam / c.n)


def test_estimate_serialises(small_run):
    d = stats.estimate(small_run).to_dict()
    assert len(d["means"]) == 3 and "tail" in d
