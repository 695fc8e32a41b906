"""Configuration, regime arithmetic and the occupancy-vector state type.

Conventions used across the package:

* ``s_i`` counts the queues holding at least ``i`` jobs (``i = 1..b``), with
  the implicit boundary values ``s_0 = n`` and ``s_{b+1} = 0``.
* Natural logarithms everywhere.
* ``gamma`` is the heavy-traffic exponent in ``lambda = n - n^(1-gamma)``.
  The negative-drift magnitude used by the tail bound lives in
  :mod:`podsim.lyapunov` as ``gamma_drift``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

ROUNDING_MODES = ("floor", "ceil", "nearest")

REGIME_CLASSES = (
    "zero_delay",
    "finite_delay",
    "infinite_delay_polylog",
    "infinite_delay_open",
)

# d <= log(n)^POLYLOG_EXPONENT counts as poly-logarithmic (see classify_regime)
POLYLOG_EXPONENT = 4.5


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ConvergenceError(RuntimeError):
    """A numerical solve did not converge."""


class StateError(ValueError):
    """A state vector outside the monotone state space."""


# ---------------------------------------------------------------------------
# state vector


@dataclass(frozen=True)
class StateVector:
    """Occupancy vector ``(s_1, ..., s_b)`` for ``n`` servers."""

    n: int
    s: tuple[int, ...]

    def __post_init__(self) -> None:
        s = tuple(int(v) for v in self.s)
        object.__setattr__(self, "s", s)
        validate_occupancy(s, self.n)

    @property
    def b(self) -> int:
        return len(self.s)

    def padded(self) -> list[int]:
        """``[n, s_1, ..., s_b, 0]`` so that index ``i`` is ``s_i``."""
        return [self.n, *self.s, 0]

    @classmethod
    def empty(cls, n: int, b: int) -> "StateVector":
        return cls(n, (0,) * b)

    @classmethod
    def full(cls, n: int, b: int) -> "StateVector":
        return cls(n, (n,) * b)

    @classmethod
    def from_queue_lengths(cls, lengths: Sequence[int], b: int) -> "StateVector":
        lengths = [int(q) for q in lengths]
        if any(q < 0 or q > b for q in lengths):
            raise StateError(f"queue lengths must lie in [0, {b}]")
        return cls(len(lengths), occupancy_from_lengths(lengths, b))


def occupancy_from_lengths(lengths: Sequence[int], b: int) -> tuple[int, ...]:
    counts = [0] * (b + 2)
    for q in lengths:
        counts[q] += 1
    s = []
    acc = 0
    for i in range(b, 0, -1):
        acc += counts[i]
        s.append(acc)
    return tuple(reversed(s))


def validate_occupancy(s: Sequence[int], n: int) -> None:
    if n < 1:
        raise StateError("n must be positive")
    prev = n
    for i, v in enumerate(s, start=1):
        if v < 0:
            raise StateError(f"s_{i} = {v} is negative")
        if v > prev:
            raise StateError(f"s_{i} = {v} exceeds s_{i - 1} = {prev}")
        prev = v


def is_valid_occupancy(s: Sequence[int], n: int) -> bool:
    try:
        validate_occupancy(s, n)
    except StateError:
        return False
    return True


# ---------------------------------------------------------------------------
# configuration


def heavy_traffic_lambda(n: float, gamma: float) -> float:
    return n - n ** (1.0 - gamma)


def round_d(d_real: float, mode: str = "nearest") -> int:
    if mode not in ROUNDING_MODES:
        raise ConfigError(f"unknown rounding mode {mode!r}")
    if mode == "floor":
        d = math.floor(d_real)
    elif mode == "ceil":
        d = math.ceil(d_real)
    else:
        d = math.floor(d_real + 0.5)
    return max(1, int(d))


@dataclass(frozen=True)
class SystemConfig:
    """One load-balancing instance.

    ``d`` is the integer sample count used by the simulators. ``d_real`` is
    the (possibly non-integer) value used by the analytic modules; it
    defaults to ``d``.
    """

    n: int
    b: int
    lam: float
    d: int
    gamma: float | None = None
    d_real: float | None = None
    m: int | None = None
    mu: float = 1.0
    seed: int = 0
    rounding: str = "nearest"
    allow_d_gt_n: bool = False
    test_mode: bool = False

    def __post_init__(self) -> None:
        if self.d_real is None:
            object.__setattr__(self, "d_real", float(self.d))
        self._validate()

    def _validate(self) -> None:
        if not isinstance(self.n, int) or isinstance(self.n, bool) or self.n < 1:
            raise ConfigError("n must be a positive integer")
        if not isinstance(self.b, int) or isinstance(self.b, bool) or self.b < 1:
            raise ConfigError("b must be a positive integer >= 1")
        if not isinstance(self.d, int) or isinstance(self.d, bool) or self.d < 1:
            raise ConfigError("d must be an integer >= 1")
        if self.d > self.n and not self.allow_d_gt_n:
            raise ConfigError(f"d = {self.d} exceeds n = {self.n} (set allow_d_gt_n to permit)")
        if self.mu != 1.0:
            raise ConfigError("service rate mu is fixed at 1")
        if self.rounding not in ROUNDING_MODES:
            raise ConfigError(f"rounding must be one of {ROUNDING_MODES}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        lam = self.lam
        if not math.isfinite(lam):
            raise ConfigError("lambda must be finite")
        if lam == 0.0:
            if not self.test_mode:
                raise ConfigError("lambda = 0 is only allowed in test mode")
        elif not (0.0 < lam < self.n):
            raise ConfigError(f"need 0 < lambda < n, got lambda = {lam}, n = {self.n}")
        if self.gamma is not None:
            if not (0.0 < self.gamma < 0.5):
                raise ConfigError("gamma must lie in (0, 0.5)")
            expected = heavy_traffic_lambda(self.n, self.gamma)
            if not math.isclose(lam, expected, rel_tol=1e-9, abs_tol=1e-9):
                raise ConfigError(
                    f"lambda = {lam} inconsistent with gamma (expected {expected})"
                )
        if self.m is not None and (not isinstance(self.m, int) or self.m < 1):
            raise ConfigError("m must be a positive integer")
        if not (self.d_real >= 1.0):
            raise ConfigError("d_real must be >= 1")

    @property
    def rho(self) -> float:
        return self.lam / self.n

    def replace(self, **changes: Any) -> "SystemConfig":
        data = asdict(self)
        if "d" in changes and "d_real" not in changes:
            data["d_real"] = None
        data.update(changes)
        return SystemConfig(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=repr)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SystemConfig":
        return config_from_dict(data)

    @classmethod
    def from_json(cls, path: str | Path) -> "SystemConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return config_from_dict(data)


CONFIG_KEYS = {
    "n", "b", "gamma", "lambda", "lam", "d", "m", "mu", "seed",
    "rounding", "allow_d_gt_n", "test_mode",
}


def config_from_dict(data: Mapping[str, Any]) -> SystemConfig:
    """Build a config from the JSON schema documented in the README.

    Either ``gamma`` or ``lambda`` (or both, consistently) must be present.
    ``d`` may be omitted when ``gamma`` and ``m`` are given; it is then taken
    from the implicit solve and rounded with ``rounding``.
    """
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "n" not in data or "b" not in data:
        raise ConfigError("config needs n and b")
    n = data["n"]
    if isinstance(n, float) and n.is_integer():
        n = int(n)
    if not isinstance(n, int) or isinstance(n, bool):
        raise ConfigError("n must be an integer")
    gamma = data.get("gamma")
    lam = data.get("lambda", data.get("lam"))
    if gamma is None and lam is None:
        raise ConfigError("config needs gamma or lambda")
    if gamma is not None:
        gamma = float(gamma)
        if not (0.0 < gamma < 0.5):
            raise ConfigError("gamma must lie in (0, 0.5)")
    if lam is None:
        lam = heavy_traffic_lambda(n, gamma)
    rounding = data.get("rounding", "nearest")
    if rounding not in ROUNDING_MODES:
        raise ConfigError(f"rounding must be one of {ROUNDING_MODES}")
    m = data.get("m")
    d_raw = data.get("d")
    d_real = None
    if d_raw is None:
        if gamma is None or m is None:
            raise ConfigError("config needs d, or gamma and m to derive it")
        sol = solve_implicit_d(n, gamma, int(m), rounding=rounding, strict=False)
        d_real = sol.d_real
        d = sol.d_int
    else:
        d_real = float(d_raw)
        if d_real < 1:
            raise ConfigError("d must be >= 1")
        d = int(d_raw) if float(d_raw).is_integer() else round_d(d_real, rounding)
    try:
        return SystemConfig(
            n=n,
            b=int(data["b"]),
            lam=float(lam),
            d=d,
            gamma=gamma,
            d_real=d_real,
            m=None if m is None else int(m),
            mu=float(data.get("mu", 1.0)),
            seed=int(data.get("seed", 0)),
            rounding=rounding,
            allow_d_gt_n=bool(data.get("allow_d_gt_n", False)),
            test_mode=bool(data.get("test_mode", False)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# regime arithmetic


@dataclass(frozen=True)
class RegimeSolution:
    n: int
    gamma: float
    m: int
    d_real: float
    d_int: int
    bracket_lo: float
    bracket_hi: float
    regime_class: str
    residual: float
    in_bracket: bool
    rounding: str = "nearest"
    iterations: int = 0
    method: str = "fixed_point"
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["notes"] = list(self.notes)
        return out


def implicit_bracket(n: float, gamma: float, m: int) -> tuple[float, float]:
    base = (2.0 * m * n**gamma) ** (1.0 / m)
    return base, base * math.log(n) ** (1.0 / m)


def implicit_residual(d: float, n: float, gamma: float, m: int) -> float:
    """``|d^m - 2 m n^gamma log d| / d^m`` evaluated without overflow."""
    u = math.log(d)
    if u <= 0:
        return math.inf
    g = m * u - math.log(2.0 * m) - gamma * math.log(n) - math.log(u)
    return abs(math.expm1(-g))


def solve_implicit_d(
    n: int,
    gamma: float,
    m: int,
    rounding: str = "nearest",
    strict: bool = True,
    tol: float = 1e-12,
    max_iter: int = 500,
    damping: float = 0.5,
) -> RegimeSolution:
    """Largest root of ``d^m = 2 m n^gamma log d``.

    Works in ``u = log d`` where the equation reads
    ``m u = log(2 m n^gamma) + log u``. A damped fixed-point iteration seeded
    at the bracket midpoint is tried first; if it stalls the root is
    bisected on ``u > 1/m``, where the left-hand side minus the right-hand
    side is increasing.

    With ``strict`` a root outside ``[bracket_lo, bracket_hi]`` raises
    :class:`ConvergenceError`; otherwise it is returned with
    ``in_bracket = False``.
    """
    if n < 2:
        raise ConfigError("n must be >= 2")
    if not (0.0 < gamma < 0.5):
        raise ConfigError("gamma must lie in (0, 0.5)")
    if m < 1:
        raise ConfigError("m must be >= 1")
    if rounding not in ROUNDING_MODES:
        raise ConfigError(f"unknown rounding mode {rounding!r}")

    log_c = math.log(2.0 * m) + gamma * math.log(n)

    def excess(u: float) -> float:
        return m * u - log_c - math.log(u)

    u_min = 1.0 / m
    if excess(u_min) > 0:
        raise ConvergenceError(
            f"d^{m} = 2*{m}*n^gamma*log d has no real root for n={n}, gamma={gamma}"
        )

    lo, hi = implicit_bracket(n, gamma, m)
    notes: list[str] = []
    method = "fixed_point"
    u = math.log(0.5 * (lo + hi))
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        if u <= 0:
            break
        u_new = (1.0 - damping) * u + damping * (log_c + math.log(u)) / m
        if abs(u_new - u) <= 1e-16 * max(1.0, abs(u)):
            u = u_new
            converged = True
            break
        u = u_new
    if not converged or u <= u_min or implicit_residual(math.exp(u), n, gamma, m) > tol:
        method = "bisection"
        a, b_ = u_min, max(2.0 * u_min, 1.0)
        while excess(b_) < 0:
            b_ *= 2.0
        for iterations in range(1, 400):
            mid = 0.5 * (a + b_)
            if excess(mid) < 0:
                a = mid
            else:
                b_ = mid
            if b_ - a <= 4e-16 * b_:
                break
        u = 0.5 * (a + b_)

    d_real = math.exp(u)
    residual = implicit_residual(d_real, n, gamma, m)
    if residual > tol:
        raise ConvergenceError(f"implicit-d residual {residual:.3e} above {tol:.1e}")
    in_bracket = lo * (1 - 1e-12) <= d_real <= hi * (1 + 1e-12)
    if not in_bracket:
        msg = f"root d={d_real:.6g} outside bracket [{lo:.6g}, {hi:.6g}]"
        if strict:
            raise ConvergenceError(msg)
        notes.append(msg)
    d_int = round_d(d_real, rounding)
    regime_class = solved_regime(n, gamma, d_real)
    by_threshold = classify_regime(n, gamma, d_real)
    if by_threshold != regime_class:
        notes.append(f"single-n threshold classification gives {by_threshold}")
    return RegimeSolution(
        n=n,
        gamma=gamma,
        m=m,
        d_real=d_real,
        d_int=d_int,
        bracket_lo=lo,
        bracket_hi=hi,
        regime_class=regime_class,
        residual=residual,
        in_bracket=in_bracket,
        rounding=rounding,
        iterations=iterations,
        method=method,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class MInference:
    m_real: float
    m_int: int
    m_leading: float
    iterations: int


def infer_m(n: float, gamma: float, d: float, tol: float = 1e-10, max_iter: int = 1000) -> MInference:
    """Solve ``m = gamma log n / log d + log(2 m log d) / log d`` for ``m``."""
    if not d > 1:
        raise ConfigError("infer_m needs d > 1")
    ld = math.log(d)
    lead = gamma * math.log(n) / ld
    m = max(lead, 1e-3)
    it = 0
    for it in range(1, max_iter + 1):
        arg = 2.0 * m * ld
        nxt = lead + math.log(arg) / ld
        nxt = max(nxt, 1e-6)
        if abs(nxt - m) <= tol * max(1.0, abs(m)):
            m = nxt
            break
        m = nxt
    else:
        raise ConvergenceError("infer_m fixed point did not converge")
    return MInference(m_real=m, m_int=max(1, int(math.floor(m + 0.5))), m_leading=lead, iterations=it)


def solved_regime(n: float, gamma: float, d: float) -> str:
    """Regime of a ``d`` from the implicit solve at fixed ``m``.

    Such a ``d`` grows like ``n^(gamma/m)``, a polynomial, so it is finite
    delay unless it already reaches the zero-delay cut.
    """
    return "zero_delay" if d >= n**gamma * math.log(n) else "finite_delay"


def classify_regime(n: float, gamma: float, d: float, polylog_exponent: float = POLYLOG_EXPONENT) -> str:
    """Delay regime of Power-of-d for the given load exponent.

    At a single finite ``n`` "poly-logarithmic" and "polynomial" are not
    distinguishable in the asymptotic sense, so a cut-off exponent is used:
    ``d <= log(n)^polylog_exponent`` counts as poly-logarithmic.
    """
    ln = math.log(n)
    if d >= n**gamma * ln:
        return "zero_delay"
    if d < ln**3:
        return "infinite_delay_open"
    if d <= ln**polylog_exponent:
        return "infinite_delay_polylog"
    return "finite_delay"
