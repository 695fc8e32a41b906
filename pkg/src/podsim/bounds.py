"""High-probability occupancy bands and their violation exponents.

For plateau ``m`` and sampling degree ``d`` the bands bracket ``s_i`` around
the leading term ``n - 2 m n log d / d^(m-i+1)`` for ``i <= m``, cap
``s_{m+1}`` by lower-order terms and cap ``sum_{l >= m+2} s_l`` by 1.
Violation probabilities are of the form ``(1/n)^(m log n / k)`` and are kept
as natural-log exponents ``-m (log n)^2 / k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    ConfigError,
    RegimeSolution,
    StateVector,
    SystemConfig,
    classify_regime,
    infer_m,
    solve_implicit_d,
)
from ._io import csv_text
from .ctmc import BandBox

# divisors k in the exponents -m (log n)^2 / k
EXP_LOWER = 5.0
EXP_UPPER = 9.0
EXP_MPLUS1 = 8.0
EXP_TAIL = 7.0

# lower < upper is only claimed once the lower-order ratio is below this
RATIO_THRESHOLD = 0.5


@dataclass(frozen=True)
class BandParams:
    n: float
    gamma: float
    m: int
    d: float

    @property
    def log_n(self) -> float:
        return math.log(self.n)

    @property
    def log_d(self) -> float:
        return math.log(self.d)

    @property
    def root(self) -> float:
        """``sqrt(m n) log n``."""
        return math.sqrt(self.m * self.n) * self.log_n


def band_params(config: SystemConfig, regime: RegimeSolution, d: float | None = None) -> BandParams:
    """Parameters for band evaluation.

    ``d`` defaults to the integer degree the chain is simulated with
    (``config.d``); pass ``regime.d_real`` for the real root.
    """
    gamma = config.gamma if config.gamma is not None else regime.gamma
    dd = float(config.d if d is None else d)
    if regime.m < 1:
        raise ConfigError("m must be >= 1")
    if not dd > 1:
        raise ConfigError("bands need d > 1")
    return BandParams(n=float(config.n), gamma=float(gamma), m=int(regime.m), d=dd)


def _check(p: BandParams) -> None:
    if p.m < 1 or not p.d > 1 or not p.n > 1:
        raise ConfigError("bands need m >= 1, d > 1, n > 1")


def leading_terms(p: BandParams) -> np.ndarray:
    _check(p)
    i = np.arange(1, p.m + 1)
    return p.n - 2.0 * p.m * p.n * p.log_d / p.d ** (p.m - i + 1)


def _indicator(p: BandParams) -> float:
    return 1.0 if p.m > 1 else 0.0


def lower_band(p: BandParams) -> np.ndarray:
    """``lower_i`` for ``i = 1..m``."""
    _check(p)
    i = np.arange(1, p.m + 1)
    m, n, d, ld = p.m, p.n, p.d, p.log_d
    return (
        n
        - 2.0 * m * n * ld / d ** (m - i + 1)
        - 4.0 * m * d ** (i - 1) * p.root
        - 16.0 * m**3 * n * ld**2 / d ** (m - i + 2)
    )


def upper_band(p: BandParams) -> tuple[np.ndarray, float, float]:
    """``(upper_i for i = 1..m, s_{m+1} cap, tail-sum cap)``."""
    _check(p)
    i = np.arange(1, p.m + 1)
    m, n, d, ld = p.m, p.n, p.d, p.log_d
    ind = _indicator(p)
    upper = (
        n
        - 2.0 * m * n * ld / d ** (m - i + 1)
        + 19.0 * m * d ** (i - 1) * p.root
        + 39.0 * m**3 * n * ld**2 / d ** (m - i + 2)
        + n ** (1.0 - p.gamma) / d ** (m - i) * ind
    )
    s_next = 18.0 * m * d ** (m - 1) * p.root + 36.0 * m**3 * n * ld**2 / d**2 + n ** (1.0 - p.gamma) * ind
    return upper, float(s_next), 1.0


def b_terms(p: BandParams) -> tuple[np.ndarray, np.ndarray]:
    """``(B_i, B_i / (m n log d / d^(m-i+1)))`` for ``i = 1..m``."""
    _check(p)
    i = np.arange(1, p.m + 1)
    m, n, d, ld = p.m, p.n, p.d, p.log_d
    B = (
        18.0 * m * d ** (i - 1) * p.root
        + 36.0 * m**3 * n * ld**2 / d ** (m - i + 2)
        + n ** (1.0 - p.gamma) / d ** (m - i) * _indicator(p)
    )
    scale = m * n * ld / d ** (m - i + 1)
    return B, B / scale


def lower_order_ratio(n: float, gamma: float, m: int, d: float) -> float:
    """Lower-band correction terms divided by the leading gap ``2 m n log d / d^(m-i+1)``.

    The quotient does not depend on ``i``; it equals
    ``2 sqrt(m) d^m log n / (sqrt(n) log d) + 8 m^2 log d / d + d n^-gamma 1{m>1} / (2 m log d)``.
    """
    if not d > 1:
        raise ConfigError("ratio needs d > 1")
    ln, ld = math.log(n), math.log(d)
    ind = 1.0 if m > 1 else 0.0
    return (
        2.0 * math.sqrt(m) * d**m * ln / (math.sqrt(n) * ld)
        + 8.0 * m**2 * ld / d
        + d * n ** (-gamma) * ind / (2.0 * m * ld)
    )


def lower_order_ratio_direct(p: BandParams, i: int) -> float:
    """Same ratio evaluated term by term at index ``i``."""
    m, n, d, ld = p.m, p.n, p.d, p.log_d
    num = (
        4.0 * m * d ** (i - 1) * p.root
        + 16.0 * m**3 * n * ld**2 / d ** (m - i + 2)
        + n ** (1.0 - p.gamma) / d ** (m - i) * _indicator(p)
    )
    return num / (2.0 * m * n * ld / d ** (m - i + 1))


def lower_order_ratio_bound(n: float, gamma: float, m: int, d: float) -> float:
    """Upper estimate after substituting ``d^m = 2 m n^gamma log d`` and ``m <= log n``."""
    ln, ld = math.log(n), math.log(d)
    ind = 1.0 if m > 1 else 0.0
    return (
        4.0 * n ** (gamma - 0.5) * ln**2.5
        + 8.0 * ln**2 * ld / d
        + (2.0 * m * ld) ** (1.0 / m - 1.0) * n ** (-gamma * (1.0 - 1.0 / m)) * ind
    )


@dataclass
class BandReport:
    n: float
    gamma: float
    m: int
    d: float
    lower: np.ndarray
    upper: np.ndarray
    leading: np.ndarray
    b_terms: np.ndarray
    s_mplus1_upper: float
    tail_sum_upper: float
    log_prob_lb: float
    log_prob_ub_i: float
    log_prob_ub_mplus1: float
    log_prob_tail: float
    ratio: float
    notes: list[str] = field(default_factory=list)

    @property
    def ordered(self) -> bool:
        """``lower_i <= leading_i <= upper_i`` for every ``i``."""
        return bool(np.all(self.lower <= self.leading) and np.all(self.leading <= self.upper))

    @property
    def vacuous(self) -> bool:
        """Some band reaches outside ``[0, n]``."""
        return bool(np.any(self.lower < 0) or np.any(self.upper > self.n) or self.s_mplus1_upper >= self.n)

    @property
    def sub_threshold(self) -> bool:
        """The bands are not expected to be meaningful at this ``n``."""
        return self.ratio >= RATIO_THRESHOLD or self.vacuous

    def clamped(self) -> tuple[np.ndarray, np.ndarray]:
        return np.clip(self.lower, 0.0, self.n), np.clip(self.upper, 0.0, self.n)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "gamma": self.gamma,
            "m": self.m,
            "d": self.d,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "leading": self.leading.tolist(),
            "b_terms": self.b_terms.tolist(),
            "s_mplus1_upper": self.s_mplus1_upper,
            "tail_sum_upper": self.tail_sum_upper,
            "log_prob_lb": self.log_prob_lb,
            "log_prob_ub_i": self.log_prob_ub_i,
            "log_prob_ub_mplus1": self.log_prob_ub_mplus1,
            "log_prob_tail": self.log_prob_tail,
            "ratio": self.ratio,
            "ordered": self.ordered,
            "vacuous": self.vacuous,
            "sub_threshold": self.sub_threshold,
            "notes": list(self.notes),
        }


def log_violation_exponent(n: float, m: int, k: float) -> float:
    """``log((1/n)^(m log n / k)) = -m (log n)^2 / k``."""
    return -m * math.log(n) ** 2 / k


def band_report_from_params(p: BandParams) -> BandReport:
    lower = lower_band(p)
    upper, s_next, tail = upper_band(p)
    B, _ = b_terms(p)
    report = BandReport(
        n=p.n,
        gamma=p.gamma,
        m=p.m,
        d=p.d,
        lower=lower,
        upper=upper,
        leading=leading_terms(p),
        b_terms=B,
        s_mplus1_upper=s_next,
        tail_sum_upper=tail,
        log_prob_lb=log_violation_exponent(p.n, p.m, EXP_LOWER),
        log_prob_ub_i=log_violation_exponent(p.n, p.m, EXP_UPPER),
        log_prob_ub_mplus1=log_violation_exponent(p.n, p.m, EXP_MPLUS1),
        log_prob_tail=log_violation_exponent(p.n, p.m, EXP_TAIL),
        ratio=lower_order_ratio(p.n, p.gamma, p.m, p.d),
    )
    if report.vacuous:
        report.notes.append("bands reach outside [0, n]; containment uses clamped values")
    if report.ratio >= RATIO_THRESHOLD:
        report.notes.append(f"lower-order ratio {report.ratio:.4g} >= {RATIO_THRESHOLD}: below the asymptotic threshold")
    return report


def band_report(config: SystemConfig, regime: RegimeSolution, d: float | None = None) -> BandReport:
    return band_report_from_params(band_params(config, regime, d))


@dataclass(frozen=True)
class Containment:
    per_index: tuple[bool, ...]  # i = 1..m
    s_mplus1: bool
    tail: bool

    @property
    def overall(self) -> bool:
        return all(self.per_index) and self.s_mplus1 and self.tail

    def to_dict(self) -> dict:
        return {
            "per_index": list(self.per_index),
            "s_mplus1": self.s_mplus1,
            "tail": self.tail,
            "overall": self.overall,
        }


def _coord(s: Sequence[int], i: int) -> int:
    return int(s[i - 1]) if 1 <= i <= len(s) else 0


def band_containment(state: StateVector, report: BandReport) -> Containment:
    """Check ``state`` against the (clamped) bands."""
    if state.n != int(report.n):
        raise ConfigError("state and report disagree on n")
    lo, hi = report.clamped()
    s = state.s
    m = report.m
    per = tuple(bool(lo[i - 1] <= _coord(s, i) <= hi[i - 1]) for i in range(1, m + 1))
    nxt = _coord(s, m + 1) <= min(report.s_mplus1_upper, report.n)
    tail = sum(int(v) for v in s[m + 1 :]) <= report.tail_sum_upper
    return Containment(per, bool(nxt), bool(tail))


def report_to_box(report: BandReport, b: int) -> BandBox:
    """Translate the bands into the box tracked by the simulator."""
    n = report.n
    lo = np.zeros(b + 2)
    hi = np.full(b + 2, n)
    clo, chi = report.clamped()
    m = report.m
    for i in range(1, min(m, b) + 1):
        lo[i] = clo[i - 1]
        hi[i] = chi[i - 1]
    if m + 1 <= b:
        hi[m + 1] = min(report.s_mplus1_upper, n)
    tail_start = m + 2
    return BandBox(lo=lo, hi=hi, tail_start=tail_start, tail_cap=report.tail_sum_upper)


# ---------------------------------------------------------------------------
# grids and thresholds


def ratio_grid(
    n_grid: Iterable[float], gammas: Iterable[float], ms: Iterable[int], rounding: str = "nearest"
) -> list[dict]:
    """Lower-order ratio at the real root ``d`` over a parameter grid."""
    rows = []
    for gamma in gammas:
        for m in ms:
            for n in n_grid:
                sol = solve_implicit_d(int(n), gamma, m, rounding=rounding, strict=False)
                rows.append(
                    {
                        "n": int(n),
                        "gamma": gamma,
                        "m": m,
                        "d_real": sol.d_real,
                        "in_bracket": sol.in_bracket,
                        "ratio": lower_order_ratio(n, gamma, m, sol.d_real),
                    }
                )
    return rows


def monotone_threshold(ns: Sequence[float], values: Sequence[float]) -> float | None:
    """Smallest ``n`` from which ``values`` is strictly decreasing to the end of the grid.

    Returns the last grid point when only the final value qualifies and
    ``None`` for an empty grid.
    """
    if not ns:
        return None
    start = len(ns) - 1
    while start > 0 and values[start - 1] > values[start]:
        start -= 1
    return ns[start]


def ratio_threshold(ns: Sequence[float], values: Sequence[float], level: float = RATIO_THRESHOLD) -> float | None:
    """Smallest ``n`` from which ``values`` stays below ``level`` to the end of the grid."""
    found = None
    for n, v in zip(reversed(ns), reversed(values)):
        if v < level:
            found = n
        else:
            break
    return found


# ---------------------------------------------------------------------------
# regime sweep over d


SWEEP_COLUMNS = ("n", "gamma", "d", "log_d_over_log_log_n", "regime", "queue_length", "m_real", "log_n_over_log_d")


def sweep_d_grid(n: float, points: int = 13) -> list[float]:
    """Log-spaced ``d`` from ``log(n)^3`` to ``n``."""
    lo = math.log(n) ** 3
    if lo >= n:
        raise ConfigError("log(n)^3 >= n: no room for a sweep")
    return [float(v) for v in np.geomspace(lo, float(n), points)]


def sweep_rows(n: float, gamma: float, d_grid: Iterable[float]) -> list[dict]:
    """One row per ``d`` with the regime and the typical queue length."""
    rows = []
    for d in d_grid:
        regime = classify_regime(n, gamma, d)
        mi = infer_m(n, gamma, d)
        qlen = "1" if regime == "zero_delay" else str(mi.m_int)
        rows.append(
            {
                "n": n,
                "gamma": gamma,
                "d": d,
                "log_d_over_log_log_n": math.log(d) / math.log(math.log(n)),
                "regime": regime,
                "queue_length": qlen,
                "m_real": mi.m_real,
                "log_n_over_log_d": math.log(n) / math.log(d),
            }
        )
    return rows


def rows_to_csv(rows: list[dict], columns: Sequence[str]) -> str:
    return csv_text(rows, columns)
