"""Fluid (mean-field ODE) approximation of the occupancy chain.

    dx_i/dt = lambda ((x_{i-1}/n)^d - (x_i/n)^d) - (x_i - x_{i+1}),

with ``x_0 = n`` and ``x_{b+1} = 0``. ``d`` may be real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .core import ConvergenceError, RegimeSolution, SystemConfig, StateError

UNDERFLOW = 1e-300


@dataclass(frozen=True)
class FixedPoint:
    x_star: np.ndarray
    kind: str  # closed_form_infinite_b | numeric_finite_b | asymptotic_plateau
    residual: float
    clamped: tuple[int, ...] = ()
    gaps: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "x_star": self.x_star.tolist(),
            "residual": self.residual,
            "clamped": list(self.clamped),
        }
        if self.gaps is not None:
            out["gaps"] = self.gaps.tolist()
        return out


@dataclass
class FluidTrajectory:
    t: np.ndarray
    x: np.ndarray  # (len(t), b)
    sol: object = field(repr=False, default=None)

    def at(self, t: float) -> np.ndarray:
        return self.sol.sol(t)

    def first_time(self, index: int, level: float, above: bool = True) -> float:
        """First grid time at which ``x_index`` crosses ``level`` (1-indexed)."""
        col = self.x[:, index - 1]
        hit = np.nonzero(col >= level if above else col <= level)[0]
        return float(self.t[hit[0]]) if hit.size else math.inf


def _params(config: SystemConfig, d: float | None) -> tuple[float, float, float, int]:
    return float(config.n), float(config.lam), float(config.d_real if d is None else d), config.b


def rhs(x, config: SystemConfig, d: float | None = None) -> np.ndarray:
    """Right-hand side of the ODE at ``x`` (length ``b``)."""
    n, lam, dd, b = _params(config, d)
    x = np.asarray(x, dtype=float)
    if x.shape != (b,):
        raise StateError(f"expected {b} components")
    padded = np.concatenate(([n], x, [0.0]))
    frac = np.clip(padded / n, 0.0, None)
    q = frac**dd
    return lam * (q[:-2] - q[1:-1]) - (padded[1:-1] - padded[2:])


def in_cone(x, n: float, tol: float = 0.0) -> bool:
    x = np.asarray(x, dtype=float)
    padded = np.concatenate(([n], x, [0.0]))
    return bool(np.all(np.diff(padded) <= tol))


def integrate(
    x0,
    config: SystemConfig,
    t_end: float,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    d: float | None = None,
    method: str = "DOP853",
    cone_tol: float | None = None,
) -> FluidTrajectory:
    """Adaptive explicit Runge-Kutta integration from ``x0``.

    Every accepted step is checked to stay in the monotone cone
    ``n >= x_1 >= ... >= x_b >= 0`` up to ``cone_tol`` (default ``1e-7 n``).
    """
    n = float(config.n)
    x0 = np.asarray(x0, dtype=float)
    if cone_tol is None:
        cone_tol = 1e-7 * n
    if not in_cone(x0, n, tol=0.0) or x0.min(initial=0.0) < 0:
        raise StateError("initial condition outside the monotone cone")
    sol = solve_ivp(
        lambda _t, y: rhs(y, config, d),
        (0.0, float(t_end)),
        x0,
        method=method,
        rtol=rtol,
        atol=atol,
        dense_output=True,
    )
    if sol.status < 0:
        raise ConvergenceError(f"integration failed: {sol.message}")
    x = sol.y.T
    for k, row in enumerate(x):
        if not in_cone(row, n, tol=cone_tol) or row.min() < -cone_tol:
            raise ConvergenceError(f"trajectory left the monotone cone at t={sol.t[k]:.6g}")
    return FluidTrajectory(t=sol.t, x=x, sol=sol)


def closed_form_exponents(d: float, b: int) -> list[float]:
    """``(d^i - 1)/(d - 1)`` for ``i = 1..b`` (``i`` itself when ``d = 1``)."""
    out = []
    e = 0.0
    power = 1.0
    for _ in range(b):
        e += power
        out.append(e)
        power = power * d
    return out


def fixed_point_closed_form(config: SystemConfig, d: float | None = None) -> FixedPoint:
    """``x_i = n (lambda/n)^((d^i - 1)/(d - 1))`` evaluated in log space."""
    n, lam, dd, b = _params(config, d)
    log_rho = math.log(lam / n) if lam > 0 else -math.inf
    x = np.zeros(b)
    clamped = []
    for i, e in enumerate(closed_form_exponents(dd, b), start=1):
        log_val = math.log(n) + e * log_rho if math.isfinite(e) else -math.inf
        val = math.exp(log_val) if log_val > math.log(UNDERFLOW) else 0.0
        if val < UNDERFLOW:
            val = 0.0
            clamped.append(i)
        x[i - 1] = val
    res = float(np.max(np.abs(rhs(x, config, dd)[: max(b - 1, 1)])))
    return FixedPoint(x_star=x, kind="closed_form_infinite_b", residual=res, clamped=tuple(clamped))


def _cascade(t: float, n: float, lam: float, dd: float, b: int) -> np.ndarray:
    """Given ``x_b = t``, the values forced by summing the balance equations."""
    x = np.empty(b)
    tail = (t / n) ** dd
    prev = n
    for i in range(b):
        x[i] = lam * ((prev / n) ** dd - tail)
        prev = x[i]
    return x


def fixed_point_finite_b(config: SystemConfig, tol: float = 1e-12, d: float | None = None) -> FixedPoint:
    """Stationary point of the ODE truncated at the buffer ``b``.

    Summing the balance equations from ``i`` to ``b`` gives
    ``x_i = lambda ((x_{i-1}/n)^d - (x_b/n)^d)``; the remaining unknown
    ``x_b`` is found by a bracketed scalar solve. ``residual`` is
    ``max_i |rhs_i| / n``.
    """
    n, lam, dd, b = _params(config, d)
    if lam == 0:
        return FixedPoint(x_star=np.zeros(b), kind="numeric_finite_b", residual=0.0)

    def gap(t: float) -> float:
        return _cascade(t, n, lam, dd, b)[-1] - t

    g0 = gap(0.0)
    if g0 <= 0:
        t_star = 0.0
    else:
        t_star = brentq(gap, 0.0, n, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    x = _cascade(t_star, n, lam, dd, b)
    x[-1] = t_star
    res = float(np.max(np.abs(rhs(x, config, dd)))) / n
    if res > tol:
        raise ConvergenceError(f"finite-b fixed point residual {res:.3e} above {tol:.1e}")
    return FixedPoint(x_star=x, kind="numeric_finite_b", residual=res)


def admission_balance(x, config: SystemConfig, d: float | None = None) -> float:
    """``lambda (1 - (x_b/n)^d) - x_1``: admitted minus served throughput."""
    n, lam, dd, _ = _params(config, d)
    x = np.asarray(x, dtype=float)
    return lam * (1.0 - (x[-1] / n) ** dd) - x[0]


def asymptotic_plateau(regime: RegimeSolution, config: SystemConfig, d: float | None = None) -> FixedPoint:
    """Plateau ``x_i = n - 2 m n log d / d^(m-i+1)`` for ``i <= m``, 0 beyond.

    ``gaps[i-1] = 2 m n log d / d^(m-i+1)`` for ``i <= m``.
    """
    n = float(config.n)
    m = regime.m
    dd = regime.d_real if d is None else float(d)
    b = config.b
    gaps = np.array([2.0 * m * n * math.log(dd) / dd ** (m - i + 1) for i in range(1, m + 1)])
    x = np.zeros(b)
    for i in range(1, min(m, b) + 1):
        x[i - 1] = n - gaps[i - 1]
    res = float(np.max(np.abs(rhs(x, config, dd)))) / n
    return FixedPoint(x_star=x, kind="asymptotic_plateau", residual=res, gaps=gaps)
