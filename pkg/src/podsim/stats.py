"""Steady-state estimates from chunked trajectories.

A trajectory stores, per chunk, time integrals of ``s_i``, of ``(s_b/n)^d``,
of band indicators and (for small ``n``) per-level occupation times. Means
are time-weighted; error bars come from batch means over contiguous chunks
after a warmup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import BandReport, report_to_box
from .ctmc import Trajectory

DEFAULT_WARMUP = 0.2
DEFAULT_BATCHES = 32
MIN_BATCHES = 8


class InsufficientData(ValueError):
    """Not enough post-warmup chunks or time for the requested batches."""


@dataclass
class Estimate:
    value: np.ndarray | float
    stderr: np.ndarray | float


@dataclass
class SteadyStateEstimate:
    n: int
    b: int
    lam: float
    d: int
    means: np.ndarray  # (b,) time-average of s_i
    means_stderr: np.ndarray
    tail: np.ndarray | None  # (b, n + 1): P(s_i >= k)
    tail_stderr: np.ndarray | None
    band_fraction: np.ndarray  # (b + 1,): per-index box membership, then the tail cap
    band_stderr: np.ndarray
    joint_fraction: float
    joint_stderr: float
    admitted: float  # time-average of lambda (1 - (s_b/n)^d)
    admitted_stderr: float
    throughput_gap: float  # admitted - mean(s_1)
    throughput_gap_stderr: float
    warmup_discarded: float
    post_warmup_time: float
    n_batches: int
    events: int
    box: dict = field(default_factory=dict)
    reps: int = 1

    def at_least(self, i: int, k: int) -> tuple[float, float]:
        """Time fraction with ``s_i >= k`` and its standard error."""
        if self.tail is None:
            raise InsufficientData("per-level occupation times were not recorded")
        if k <= 0:
            return 1.0, 0.0
        if k > self.n:
            return 0.0, 0.0
        return float(self.tail[i - 1, k]), float(self.tail_stderr[i - 1, k])

    def at_most(self, i: int, k: int) -> tuple[float, float]:
        p, se = self.at_least(i, k + 1)
        return 1.0 - p, se

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "b": self.b,
            "lambda": self.lam,
            "d": self.d,
            "means": self.means.tolist(),
            "means_stderr": self.means_stderr.tolist(),
            "band_fraction": self.band_fraction.tolist(),
            "band_stderr": self.band_stderr.tolist(),
            "joint_fraction": self.joint_fraction,
            "joint_stderr": self.joint_stderr,
            "admitted": self.admitted,
            "admitted_stderr": self.admitted_stderr,
            "throughput_gap": self.throughput_gap,
            "throughput_gap_stderr": self.throughput_gap_stderr,
            "warmup_discarded": self.warmup_discarded,
            "post_warmup_time": self.post_warmup_time,
            "n_batches": self.n_batches,
            "events": self.events,
            "reps": self.reps,
            "box": self.box,
        }
        if self.tail is not None:
            out["tail"] = self.tail.tolist()
            out["tail_stderr"] = self.tail_stderr.tolist()
        return out


def _batch_ratio(num: np.ndarray, den: np.ndarray, groups: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Ratio estimate ``sum num / sum den`` and its batch-means standard error.

    ``num`` has the chunk axis first. Batch weights are their share of the
    total time, so unequal batch lengths are handled.
    """
    total_den = den.sum()
    mean = num.sum(axis=0) / total_den
    B = len(groups)
    bn = np.stack([num[g].sum(axis=0) for g in groups])
    bd = np.array([den[g].sum() for g in groups])
    shape = (B,) + (1,) * (bn.ndim - 1)
    bm = bn / bd.reshape(shape)
    w = (bd / total_den).reshape(shape)
    var = (w**2 * (bm - mean) ** 2).sum(axis=0) * B / (B - 1)
    return mean, np.sqrt(var)


def estimate(
    trajectory: Trajectory,
    warmup_fraction: float = DEFAULT_WARMUP,
    n_batches: int = DEFAULT_BATCHES,
) -> SteadyStateEstimate:
    """Time-weighted means with batch-means error bars.

    Warmup is chunk-granular: chunks ending at or before
    ``warmup_fraction * total_time`` are dropped. The remaining chunks are
    split into ``n_batches`` contiguous batches.
    """
    if n_batches < MIN_BATCHES:
        raise InsufficientData(f"need at least {MIN_BATCHES} batches")
    if not 0.0 <= warmup_fraction < 1.0:
        raise InsufficientData("warmup fraction must lie in [0, 1)")
    tr = trajectory
    cfg = tr.config
    total = tr.total_time
    if total <= 0:
        raise InsufficientData("trajectory covers no time")
    cut = warmup_fraction * total
    keep = np.nonzero(tr.end_times > cut * (1 + 1e-12))[0]
    if warmup_fraction == 0.0:
        keep = np.arange(len(tr.durations))
    keep = keep[tr.durations[keep] > 0]
    if keep.size < n_batches:
        raise InsufficientData(f"{keep.size} post-warmup chunks for {n_batches} batches")
    dur = tr.durations[keep]
    post = float(dur.sum())
    if post <= 0:
        raise InsufficientData("no post-warmup time")
    groups = np.array_split(np.arange(keep.size), n_batches)

    means, means_se = _batch_ratio(tr.int_s[keep], dur, groups)
    band, band_se = _batch_ratio(tr.band[keep], dur, groups)
    joint, joint_se = _batch_ratio(tr.joint[keep], dur, groups)
    qb, _ = _batch_ratio(tr.int_qb[keep], dur, groups)
    lam = float(cfg.lam)
    admitted_int = lam * (tr.durations[keep] - tr.int_qb[keep])
    admitted, admitted_se = _batch_ratio(admitted_int, dur, groups)
    gap, gap_se = _batch_ratio(admitted_int - tr.int_s[keep][:, 0], dur, groups)

    tail = tail_se = None
    if tr.hist is not None:
        occ, occ_se = _batch_ratio(tr.hist[keep], dur, groups)  # (b, n + 1): P(s_i = k)
        tail = np.flip(np.cumsum(np.flip(occ, axis=1), axis=1), axis=1)
        # P(s_i >= k) per batch, for its own standard error
        cum = np.flip(np.cumsum(np.flip(tr.hist[keep], axis=2), axis=2), axis=2)
        _, tail_se = _batch_ratio(cum, dur, groups)
        tail = np.clip(tail, 0.0, 1.0)

    return SteadyStateEstimate(
        n=cfg.n,
        b=cfg.b,
        lam=lam,
        d=cfg.d,
        means=np.asarray(means, dtype=float),
        means_stderr=np.asarray(means_se, dtype=float),
        tail=tail,
        tail_stderr=tail_se,
        band_fraction=np.clip(np.asarray(band, dtype=float), 0.0, 1.0),
        band_stderr=np.asarray(band_se, dtype=float),
        joint_fraction=min(max(float(joint), 0.0), 1.0),
        joint_stderr=float(joint_se),
        admitted=float(admitted),
        admitted_stderr=float(admitted_se),
        throughput_gap=float(gap),
        throughput_gap_stderr=float(gap_se),
        warmup_discarded=float(total - post),
        post_warmup_time=post,
        n_batches=n_batches,
        events=int(tr.events[keep].sum()),
        box=tr.box.to_dict(),
    )


def combine(estimates: Sequence[SteadyStateEstimate]) -> SteadyStateEstimate:
    """Pool independent replications, weighting by post-warmup time.

    Standard errors combine as independent estimates. Summation order does
    not matter beyond float rounding.
    """
    if not estimates:
        raise InsufficientData("nothing to combine")
    first = estimates[0]
    for e in estimates[1:]:
        if (e.n, e.b, e.d, e.lam) != (first.n, first.b, first.d, first.lam) or e.box != first.box:
            raise InsufficientData("replications disagree on the configuration")
    T = sum(e.post_warmup_time for e in estimates)
    w = [e.post_warmup_time / T for e in estimates]

    def pool(attr: str):
        vals = [getattr(e, attr) for e in estimates]
        if vals[0] is None:
            return None
        return sum(wi * np.asarray(v) for wi, v in zip(w, vals))

    def pool_se(attr: str):
        vals = [getattr(e, attr) for e in estimates]
        if vals[0] is None:
            return None
        return np.sqrt(sum(wi**2 * np.asarray(v) ** 2 for wi, v in zip(w, vals)))

    return SteadyStateEstimate(
        n=first.n,
        b=first.b,
        lam=first.lam,
        d=first.d,
        means=pool("means"),
        means_stderr=pool_se("means_stderr"),
        tail=pool("tail"),
        tail_stderr=pool_se("tail_stderr"),
        band_fraction=pool("band_fraction"),
        band_stderr=pool_se("band_stderr"),
        joint_fraction=float(pool("joint_fraction")),
        joint_stderr=float(pool_se("joint_stderr")),
        admitted=float(pool("admitted")),
        admitted_stderr=float(pool_se("admitted_stderr")),
        throughput_gap=float(pool("throughput_gap")),
        throughput_gap_stderr=float(pool_se("throughput_gap_stderr")),
        warmup_discarded=sum(e.warmup_discarded for e in estimates),
        post_warmup_time=T,
        n_batches=first.n_batches,
        events=sum(e.events for e in estimates),
        box=first.box,
        reps=sum(e.reps for e in estimates),
    )


# ---------------------------------------------------------------------------
# band containment


@dataclass
class ContainmentVerdict:
    per_band: list[float]  # i = 1..m
    per_band_stderr: list[float]
    s_mplus1: float | None
    tail: float | None
    joint: float
    joint_stderr: float
    log_violation_observed: float
    log_violation_bound: float
    exceeds_bound: bool
    sub_threshold: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_band": self.per_band,
            "per_band_stderr": self.per_band_stderr,
            "s_mplus1": self.s_mplus1,
            "tail": self.tail,
            "joint": self.joint,
            "joint_stderr": self.joint_stderr,
            "log_violation_observed": self.log_violation_observed,
            "log_violation_bound": self.log_violation_bound,
            "exceeds_bound": self.exceeds_bound,
            "sub_threshold": self.sub_threshold,
            "notes": self.notes,
        }


def _boxes_match(box: dict, report: BandReport, b: int) -> bool:
    want = report_to_box(report, b).to_dict()
    if box.get("tail_start") != want["tail_start"]:
        return False
    if not math.isclose(float(box.get("tail_cap", math.nan)), want["tail_cap"]):
        return False
    return np.allclose(box.get("lo", []), want["lo"]) and np.allclose(box.get("hi", []), want["hi"])


def _log_bound_violation(report: BandReport) -> float:
    """Log of the union bound over all band statements."""
    terms = [report.log_prob_lb, report.log_prob_ub_i, report.log_prob_ub_mplus1, report.log_prob_tail]
    counts = [report.m, report.m, 1, 1]
    return float(np.logaddexp.reduce([t + math.log(c) for t, c in zip(terms, counts)]))


def containment(source: Trajectory | SteadyStateEstimate, report: BandReport, **estimate_kwargs) -> ContainmentVerdict:
    """Time fractions inside each band and inside all of them at once.

    The trajectory must have been simulated with the box from
    :func:`podsim.bounds.report_to_box`. The violation fraction is compared
    with the union bound over the band statements in log space; exceeding it below the
    asymptotic threshold is expected and reported, not raised.
    """
    est = estimate(source, **estimate_kwargs) if isinstance(source, Trajectory) else source
    if est.n != int(report.n):
        raise InsufficientData("estimate and report disagree on n")
    if not _boxes_match(est.box, report, est.b):
        raise InsufficientData("trajectory was not simulated with this report's band box")
    m, b = report.m, est.b
    per = [float(est.band_fraction[i - 1]) for i in range(1, min(m, b) + 1)]
    per_se = [float(est.band_stderr[i - 1]) for i in range(1, min(m, b) + 1)]
    nxt = float(est.band_fraction[m]) if m + 1 <= b else None
    tail = float(est.band_fraction[b]) if m + 2 <= b else None
    viol = 1.0 - est.joint_fraction
    log_obs = math.log(viol) if viol > 0 else -math.inf
    log_thm = _log_bound_violation(report)
    notes = []
    exceeds = log_obs > log_thm
    if exceeds and report.sub_threshold:
        notes.append("violation fraction above the union bound; n is below the asymptotic threshold")
    elif exceeds:
        notes.append("violation fraction above the union bound")
    return ContainmentVerdict(
        per_band=per,
        per_band_stderr=per_se,
        s_mplus1=nxt,
        tail=tail,
        joint=est.joint_fraction,
        joint_stderr=est.joint_stderr,
        log_violation_observed=log_obs,
        log_violation_bound=log_thm,
        exceeds_bound=exceeds,
        sub_threshold=report.sub_threshold,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# occupancy profile


@dataclass
class OccupancyProfile:
    fractions: np.ndarray  # f_i = mean(s_i) / n
    fractions_stderr: np.ndarray
    exactly: np.ndarray  # f_i - f_{i+1}: fraction of queues with length exactly i
    shorter_than: np.ndarray  # 1 - f_i: fraction with length < i
    predicted_shorter_than: np.ndarray | None  # n^-gamma d^(i-1) for i <= m
    busy_fraction: float
    load: float  # lambda / n

    def to_dict(self) -> dict:
        return {
            "fractions": self.fractions.tolist(),
            "fractions_stderr": self.fractions_stderr.tolist(),
            "exactly": self.exactly.tolist(),
            "shorter_than": self.shorter_than.tolist(),
            "predicted_shorter_than": None if self.predicted_shorter_than is None else self.predicted_shorter_than.tolist(),
            "busy_fraction": self.busy_fraction,
            "load": self.load,
        }


def occupancy_profile(
    est: SteadyStateEstimate, gamma: float | None = None, m: int | None = None, d: float | None = None
) -> OccupancyProfile:
    n = float(est.n)
    f = est.means / n
    f_se = est.means_stderr / n
    exactly = f - np.append(f[1:], 0.0)
    pred = None
    if gamma is not None and m is not None:
        dd = float(est.d if d is None else d)
        pred = np.array([n ** (-gamma) * dd ** (i - 1) for i in range(1, m + 1)])
    return OccupancyProfile(
        fractions=f,
        fractions_stderr=f_se,
        exactly=exactly,
        shorter_than=1.0 - f,
        predicted_shorter_than=pred,
        busy_fraction=float(f[0]),
        load=est.lam / n,
    )
