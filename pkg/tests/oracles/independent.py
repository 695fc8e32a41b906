"""Reference computations written without the package's code paths.

High-precision mpmath bisection, exact Fractions and brute-force
enumeration. Used to generate the frozen fixtures and by a few tests
directly.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import mpmath as mp

mp.mp.dps = 50


# ---------------------------------------------------------------------------
# implicit d


def implicit_d_bisection(n: int, gamma: float, m: int) -> float | None:
    """Largest root of ``d^m = 2 m n^gamma log d`` by bisection in ``d``; None if no root above 1."""
    c = 2 * m * mp.mpf(n) ** mp.mpf(gamma)

    def g(d):
        return d**m - c * mp.log(d)

    # g falls until d^m = c/m and rises after it, so the largest root lies beyond
    lo = (c / m) ** (mp.mpf(1) / m)
    if lo <= 1 or g(lo) > 0:
        return None
    hi = lo * 2
    while g(hi) < 0:
        hi *= 2
    for _ in range(400):
        mid = (lo + hi) / 2
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


# ---------------------------------------------------------------------------
# Taylor-type inequalities evaluated with 50 digits


def power_decay_holds(d, r, f) -> bool:
    d, r, f = mp.mpf(d), mp.mpf(r), mp.mpf(f)
    base = 1 - r * mp.log(d) / d + f
    if base <= 0:
        return False
    return base**d <= 2 / d**r


def bernoulli_lower_holds(d, f) -> bool:
    d, f = mp.mpf(d), mp.mpf(f)
    return 1 - d * f <= (1 - f) ** d


def bernoulli_upper_holds(d, f) -> bool:
    d, f = mp.mpf(d), mp.mpf(f)
    return (1 - f) ** d <= 1 - d * f + (d * f) ** 2 / 2


def ssc_identity_holds(n, m) -> bool:
    n = mp.mpf(n)
    R = mp.sqrt(m * n) * mp.log(n)
    return (n / (n + R)) ** (R / 2) <= n ** (-(m * mp.log(n)) / 4)


def threshold(points, holds) -> float | None:
    """Smallest grid point from which every later point holds."""
    thr = None
    for x in sorted(points, reverse=True):
        if not holds[x]:
            break
        thr = x
    return thr


# ---------------------------------------------------------------------------
# exact chain arithmetic


def occupancy(lengths, b):
    return tuple(sum(1 for q in lengths if q >= i) for i in range(1, b + 1))


def per_queue_rates(state, n, b, d, lam: Fraction) -> dict[tuple, Fraction]:
    """Induced rates on occupancy vectors from one representative queue assignment.

    Arrival rates come from all ``n^d`` ordered sample tuples with the
    first-sampled shortest queue winning; departures from every busy queue.
    """
    lengths = []
    for i in range(n):
        lengths.append(sum(1 for v in state if v > i))
    out: dict[tuple, Fraction] = {}
    total = n**d
    for sample in itertools.product(range(n), repeat=d):
        best = min(sample, key=lambda q: lengths[q])  # min keeps the first of equals
        if lengths[best] >= b:
            continue
        new = list(lengths)
        new[best] += 1
        key = occupancy(new, b)
        out[key] = out.get(key, Fraction(0)) + lam / total
    for q in range(n):
        if lengths[q] > 0:
            new = list(lengths)
            new[q] -= 1
            key = occupancy(new, b)
            out[key] = out.get(key, Fraction(0)) + 1
    return out


def all_states(n, b):
    out = []
    for s in itertools.product(range(n + 1), repeat=b):
        if all(s[i] >= s[i + 1] for i in range(b - 1)):
            out.append(tuple(s))
    return sorted(out)


def stationary_fractions(n, b, d, lam: Fraction) -> dict[tuple, Fraction]:
    """Exact stationary law by Gaussian elimination over the rationals."""
    states = all_states(n, b)
    idx = {s: k for k, s in enumerate(states)}
    N = len(states)
    Q = [[Fraction(0)] * N for _ in range(N)]
    for s in states:
        for t, r in per_queue_rates(s, n, b, d, lam).items():
            Q[idx[s]][idx[t]] += r
            Q[idx[s]][idx[s]] -= r
    # pi Q = 0 with sum(pi) = 1: transpose, replace last row
    A = [[Q[j][i] for j in range(N)] for i in range(N)]
    A[-1] = [Fraction(1)] * N
    rhs = [Fraction(0)] * (N - 1) + [Fraction(1)]
    for col in range(N):
        piv = next(r for r in range(col, N) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        for r in range(N):
            if r != col and A[r][col] != 0:
                f = A[r][col] / A[col][col]
                A[r] = [a - f * c for a, c in zip(A[r], A[col])]
                rhs[r] -= f * rhs[col]
    return {s: rhs[k] / A[k][k] for k, s in enumerate(states)}


def mm1b_busy(lam: Fraction, b: int) -> Fraction:
    """P(queue >= 1) for M/M/1 with capacity b: truncated geometric law."""
    weights = [lam**k for k in range(b + 1)]
    return 1 - weights[0] / sum(weights)


# ---------------------------------------------------------------------------
# fluid and ratio


def closed_form_fixed_point(n, lam, d, b):
    rho = mp.mpf(lam) / n
    return [float(n * rho ** ((mp.mpf(d) ** i - 1) / (d - 1))) for i in range(1, b + 1)]


def lower_ratio_terms(n, gamma, m, d, i=1):
    """Lower-band corrections over the leading gap, term by term."""
    n, gamma, d = mp.mpf(n), mp.mpf(gamma), mp.mpf(d)
    ld = mp.log(d)
    root = mp.sqrt(m * n) * mp.log(n)
    num = 4 * m * d ** (i - 1) * root + 16 * m**3 * n * ld**2 / d ** (m - i + 2)
    if m > 1:
        num += n ** (1 - gamma) / d ** (m - i)
    return float(num / (2 * m * n * ld / d ** (m - i + 1)))
