"""Drift engine: exact drift under the generator, the Lyapunov catalog,
region predicates, drift scans, the iterative tail bound and numeric checks
of the Taylor-type inequalities used by the drift arguments.

Every catalog function is the pointwise minimum of one or two affine
functions of the occupancy vector, which keeps drift and region membership
exact up to float rounding.

Symbols: ``R = sqrt(m n) log n``, ``L = log d`` and ``n^(1-gamma) = n - lambda``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import ConfigError, StateVector, SystemConfig
from .ctmc import enumerate_states, generator_row, solve_stationary_exact, _require_state

FAMILIES = (
    "BaseV1",
    "Lower_L",
    "Lower_W",
    "Lower_Z",
    "Lower_Wtilde",
    "Upper_LU",
    "TailSum_U",
    "Upper_Wtilde",
)

DRIFT_TARGETS = ("template", "zero")

# above 2**53 neither states nor lambda = n - n^(1-gamma) are exact in float,
# and the drift (a difference of O(n) rates) loses the -sqrt(mn) log n scale
MAX_SCAN_N = 2**53


# ---------------------------------------------------------------------------
# affine building blocks


@dataclass(frozen=True)
class Affine:
    """``const + sum_i coef_i s_i`` with 1-indexed coordinates."""

    const: float
    coef: tuple[tuple[int, float], ...] = ()

    @staticmethod
    def make(const: float, coef: Mapping[int, float]) -> "Affine":
        return Affine(float(const), tuple(sorted((int(i), float(a)) for i, a in coef.items() if a != 0)))

    def __call__(self, p: Sequence[int]) -> float:
        """Evaluate on a padded state ``p`` (``p[0] = n``, zeros beyond ``b``)."""
        v = self.const
        for i, a in self.coef:
            if i < len(p):
                v += a * p[i]
        return v

    def coefficient(self, i: int) -> float:
        for j, a in self.coef:
            if j == i:
                return a
        return 0.0

    def __add__(self, other: "Affine") -> "Affine":
        c = dict(self.coef)
        for i, a in other.coef:
            c[i] = c.get(i, 0.0) + a
        return Affine.make(self.const + other.const, c)

    def __neg__(self) -> "Affine":
        return Affine(-self.const, tuple((i, -a) for i, a in self.coef))

    def __sub__(self, other: "Affine") -> "Affine":
        return self + (-other)


def _coord(i: int, sign: float, const: float, b: int) -> Affine:
    """``const + sign * s_i``; coordinates beyond ``b`` are identically zero."""
    if i > b:
        return Affine(float(const))
    return Affine.make(const, {i: sign})


def _sum_coords(lo: int, hi: int, b: int, const: float = 0.0) -> Affine:
    return Affine.make(const, {i: 1.0 for i in range(lo, min(hi, b) + 1)})


def _total(items: Iterable[Affine]) -> Affine:
    out = Affine(0.0)
    for a in items:
        out = out + a
    return out


@dataclass(frozen=True)
class PiecewiseMin:
    """Pointwise minimum of affine branches."""

    branches: tuple[Affine, ...]
    label: str = ""

    def __post_init__(self) -> None:
        if not self.branches:
            raise ConfigError("need at least one branch")

    def values(self, p: Sequence[int]) -> list[float]:
        return [br(p) for br in self.branches]

    def evaluate(self, p: Sequence[int]) -> tuple[float, int]:
        vals = self.values(p)
        k = int(np.argmin(vals))
        return vals[k], k + 1

    def __call__(self, p: Sequence[int]) -> float:
        return min(self.values(p))

    def support(self) -> set[int]:
        return {i for br in self.branches for i, _ in br.coef}


# ---------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class CatalogParams:
    n: int
    lam: float
    d: float
    m: int
    b: int
    B_mplus2: float = 1.0

    @classmethod
    def from_config(cls, config: SystemConfig, m: int | None = None, B_mplus2: float = 1.0,
                    d: float | None = None) -> "CatalogParams":
        m = m if m is not None else config.m
        if m is None:
            raise ConfigError("catalog needs the plateau m")
        return cls(n=config.n, lam=float(config.lam), d=float(config.d if d is None else d),
                   m=int(m), b=config.b, B_mplus2=float(B_mplus2))

    @property
    def R(self) -> float:
        return math.sqrt(self.m * self.n) * math.log(self.n)

    @property
    def L(self) -> float:
        return math.log(self.d)

    @property
    def n_pow(self) -> float:
        """``n^(1 - gamma) = n - lambda``."""
        return self.n - self.lam

    @property
    def ind_m(self) -> float:
        return 1.0 if self.m > 1 else 0.0

    def b_term(self, i: int) -> float:
        n, m, d, L = self.n, self.m, self.d, self.L
        return (
            18.0 * m * d ** (i - 1) * self.R
            + 36.0 * m**3 * n * L**2 / d ** (m - i + 2)
            + self.n_pow / d ** (m - i) * self.ind_m
        )

    def lower_band(self, i: int) -> float:
        n, m, d, L = self.n, self.m, self.d, self.L
        return n - 2.0 * m * n * L / d ** (m - i + 1) - 4.0 * m * d ** (i - 1) * self.R - 16.0 * m**3 * n * L**2 / d ** (m - i + 2)


@dataclass(frozen=True)
class LyapunovSpec:
    """One catalog member.

    ``indices`` keys by family:

    * ``Lower_L``: ``l``, ``k`` with ``0 <= l <= k-1 <= m-1``
    * ``Lower_W``: ``l``, ``k`` with ``1 <= l <= k <= m``
    * ``Lower_Z``: ``i``, ``k`` with ``0 <= i <= k-1 <= m-1``
    * ``Lower_Wtilde``: ``j``, ``k`` with ``1 <= j <= k <= m``
    * ``Upper_LU``: ``j`` (``0 <= j <= m``) for ``U_j`` or ``l`` (``1 <= l <= m+1``) for ``L_l``
    * ``Upper_Wtilde``: ``j`` with ``1 <= j <= m``

    ``branch`` selects a single branch (1 or 2) of a min-family.
    """

    family: str
    params: CatalogParams
    indices: tuple[tuple[str, int], ...] = ()
    branch: int | None = None

    @staticmethod
    def make(family: str, params: CatalogParams, branch: int | None = None, **indices: int) -> "LyapunovSpec":
        spec = LyapunovSpec(family, params, tuple(sorted(indices.items())), branch)
        spec.function()  # validates
        return spec

    @property
    def idx(self) -> dict[str, int]:
        return dict(self.indices)

    def function(self) -> PiecewiseMin:
        return build_function(self)

    def to_dict(self) -> dict:
        return {"family": self.family, "indices": self.idx, "branch": self.branch}


def _v_lower_l(p: CatalogParams, i: int, k: int) -> Affine:
    n, m, d, L, b = p.n, p.m, p.d, p.L, p.b
    if i < k:
        return _coord(i, 1.0, -n + 3.0 * i * m * n * L / d ** (k - i + 1), b)
    return _coord(k, -1.0, n - 3.0 * k * m * n * L / d, b)


def _w_lower(p: CatalogParams, l: int, k: int) -> Affine:
    n, m, d, L = p.n, p.m, p.d, p.L
    return _coord(l, -1.0, n - 3.0 * (2 * m + k - l) * m * n * L / d ** (k - l + 1), p.b)


def _w_ik(p: CatalogParams, i: int, k: int) -> Affine:
    n, m, d, L, R = p.n, p.m, p.d, p.L, p.R
    if i < k:
        const = (
            -n
            + 2.0 * m * n * L / d ** (k - i + 1)
            + (2 * i + 1) * d ** (i - 1) * R
            + 3.0 * (i + 1) * m * n * L / d ** (k - i + 2)
        )
        return _coord(i, 1.0, const, p.b)
    const = n - 2.0 * m * n * L / d - 2.0 * k * d ** (k - 1) * R - 10.0 * m**2 * n * L / d**2
    return _coord(k, -1.0, const, p.b)


def _w_tilde_lower(p: CatalogParams, j: int, k: int) -> Affine:
    n, m, d, L, R = p.n, p.m, p.d, p.L, p.R
    const = (
        n
        - 2.0 * m * n * L / d ** (k - j + 1)
        - (4 * m - j) * d ** (j - 1) * R
        - 16.0 * (k - j + 1) * m**2 * n * L**2 / d ** (k - j + 2)
    )
    return _coord(j, -1.0, const, p.b)


def _l_upper(p: CatalogParams, l: int) -> Affine:
    n, m, d, L, R, b = p.n, p.m, p.d, p.L, p.R, p.b
    if l == m + 1:
        factor = 1.0 + (b - 1) * (1.0 if p.B_mplus2 >= 2 else 0.0)
        cap = factor * (8.0 * m * d ** (m - 1) * R + 18.0 * m**3 * n * L**2 / d**2 + p.n_pow * p.ind_m)
        return _sum_coords(m + 1, b, b, -cap)
    const = n - 2.0 * m * n * L / d ** (m - l + 1) + 3.0 * l * d ** (l - 1) * R + l * m * n * L / d ** (m - l + 2)
    return _coord(l, -1.0, const, b)


def _w_tilde_upper(p: CatalogParams, j: int) -> Affine:
    n, m, d, L = p.n, p.m, p.d, p.L
    const = -n + 2.0 * m * n * L / d ** (m - j + 1) - p.b_term(j) - 2.0 * (m - j) * m * n * L / d ** (m - j + 2)
    return _coord(j, 1.0, const, p.b)


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def build_function(spec: LyapunovSpec) -> PiecewiseMin:
    p = spec.params
    m = p.m
    ix = spec.idx
    fam = spec.family
    _need(fam in FAMILIES, f"unknown family {fam!r}")
    _need(m >= 1 and p.d > 1 and p.n >= 2, "catalog needs m >= 1, d > 1, n >= 2")
    branches: list[Affine]
    if fam == "BaseV1":
        n, d, L = p.n, p.d, p.L
        branches = [_coord(1, -1.0, n - 2.0 * m * n * L / d - 2.0 * n * L / d**2 - p.R, p.b)]
    elif fam == "Lower_L":
        l, k = ix.get("l"), ix.get("k")
        _need(l is not None and k is not None, "Lower_L needs l and k")
        _need(0 <= l <= k - 1 <= m - 1, "Lower_L needs 0 <= l <= k-1 <= m-1")
        one = _v_lower_l(p, k, k) - _total(_v_lower_l(p, j, k) for j in range(l + 1, k))
        branches = [one] if l == 0 else [one, _v_lower_l(p, l, k)]
    elif fam == "Lower_W":
        l, k = ix.get("l"), ix.get("k")
        _need(l is not None and k is not None, "Lower_W needs l and k")
        _need(1 <= l <= k <= m, "Lower_W needs 1 <= l <= k <= m")
        branches = [_w_lower(p, l, k)]
    elif fam == "Lower_Z":
        i, k = ix.get("i"), ix.get("k")
        _need(i is not None and k is not None, "Lower_Z needs i and k")
        _need(0 <= i <= k - 1 <= m - 1, "Lower_Z needs 0 <= i <= k-1 <= m-1")
        one = _w_ik(p, k, k) - _total(_w_ik(p, l, k) for l in range(i + 1, k))
        branches = [one] if i == 0 else [one, _w_ik(p, i, k)]
    elif fam == "Lower_Wtilde":
        j, k = ix.get("j"), ix.get("k")
        _need(j is not None and k is not None, "Lower_Wtilde needs j and k")
        _need(1 <= j <= k <= m, "Lower_Wtilde needs 1 <= j <= k <= m")
        branches = [_w_tilde_lower(p, j, k)]
    elif fam == "Upper_LU":
        if "l" in ix:
            l = ix["l"]
            _need(1 <= l <= m + 1 and "j" not in ix, "Upper_LU L_l needs 1 <= l <= m+1")
            branches = [_l_upper(p, l)]
        else:
            j = ix.get("j")
            _need(j is not None and 0 <= j <= m, "Upper_LU U_j needs 0 <= j <= m")
            one = _l_upper(p, m + 1) - _total(_l_upper(p, l) for l in range(j + 1, m + 1))
            branches = [one] if j == 0 else [one, _l_upper(p, j)]
    elif fam == "TailSum_U":
        _need(not ix, "TailSum_U takes no indices")
        branches = [_sum_coords(m + 2, p.b, p.b)]
    else:  # Upper_Wtilde
        j = ix.get("j")
        _need(j is not None and 1 <= j <= m, "Upper_Wtilde needs 1 <= j <= m")
        branches = [_w_tilde_upper(p, j)]
    if spec.branch is not None:
        _need(1 <= spec.branch <= len(branches), f"branch {spec.branch} not available")
        branches = [branches[spec.branch - 1]]
    label = fam + "".join(f"_{k}{v}" for k, v in spec.indices)
    return PiecewiseMin(tuple(branches), label)


@dataclass(frozen=True)
class Evaluation:
    value: float
    branch: int  # 1-based index of the attaining branch


def _padded(state: StateVector, b: int) -> list[int]:
    p = state.padded()
    if state.b != b:
        raise ConfigError(f"state has b={state.b}, catalog has b={b}")
    return p


def evaluate(spec: LyapunovSpec, state: StateVector) -> Evaluation:
    if state.n != spec.params.n:
        raise ConfigError("state and spec disagree on n")
    v, k = spec.function().evaluate(_padded(state, spec.params.b))
    return Evaluation(v, k)


# ---------------------------------------------------------------------------
# drift


def _rates(p: Sequence[int], n: int, d: float, lam: float, b: int) -> tuple[list[float], list[float]]:
    q = [(p[i] / n) ** d for i in range(b + 2)]
    q[0], q[b + 1] = 1.0, 0.0
    up = [0.0] + [lam * (q[i - 1] - q[i]) for i in range(1, b + 1)]
    down = [0.0] + [float(p[i] - p[i + 1]) for i in range(1, b + 1)]
    return up, down


def drift_piecewise(fn: PiecewiseMin, p: Sequence[int], n: int, d: float, lam: float, b: int) -> float:
    """Drift of ``fn`` at padded state ``p``; branch values are updated incrementally."""
    vals = fn.values(p)
    v0 = min(vals)
    # offsets from the minimum first, so unit steps survive at large n
    gaps = [v - v0 for v in vals]
    up, down = _rates(p, n, d, lam, b)
    total = 0.0
    for i in range(1, b + 1):
        if up[i] > 0:
            total += up[i] * min(g + br.coefficient(i) for g, br in zip(gaps, fn.branches))
        if down[i] > 0:
            total += down[i] * min(g - br.coefficient(i) for g, br in zip(gaps, fn.branches))
    return total


def drift(target, state: StateVector, config: SystemConfig, exact: bool = False):
    """``sum_{s'} q(s, s') (V(s') - V(s))`` over the generator row of ``state``.

    ``target`` is a :class:`LyapunovSpec`, a :class:`PiecewiseMin` or any
    callable taking a :class:`StateVector`. With ``exact`` the rates are
    fractions; the callable should then return exact values too.
    """
    _require_state(state, config)
    if isinstance(target, LyapunovSpec):
        if target.params.n != config.n or target.params.b != config.b:
            raise ConfigError("spec parameters do not match the config")
        target = target.function()
    if isinstance(target, PiecewiseMin) and not exact:
        return drift_piecewise(target, state.padded(), config.n, float(config.d), float(config.lam), config.b)
    if isinstance(target, PiecewiseMin):
        fn = target
        target = lambda st: _exact_min(fn, st.padded())  # noqa: E731
    v0 = target(state)
    total = Fraction(0) if exact else 0.0
    for nxt, rate in generator_row(state, config, exact=exact):
        total += rate * (target(nxt) - v0)
    return total


def _exact_min(fn: PiecewiseMin, p: Sequence[int]) -> Fraction:
    out = None
    for br in fn.branches:
        v = Fraction(br.const)
        for i, a in br.coef:
            if i < len(p):
                v += Fraction(a) * p[i]
        out = v if out is None else min(out, v)
    return out


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class Constraint:
    fn: PiecewiseMin
    op: str  # "<=" or ">="
    bound: float
    label: str = ""

    def holds(self, p: Sequence[int]) -> bool:
        v = self.fn(p)
        return v <= self.bound if self.op == "<=" else v >= self.bound


@dataclass(frozen=True)
class RegionSpec:
    """Intersection of closed constraints; no constraints means all of S."""

    constraints: tuple[Constraint, ...] = ()
    label: str = "S"

    def contains_padded(self, p: Sequence[int]) -> bool:
        return all(c.holds(p) for c in self.constraints)

    def to_dict(self) -> dict:
        return {"label": self.label, "constraints": [c.label for c in self.constraints]}


def region_membership(region: RegionSpec, state: StateVector) -> bool:
    return region.contains_padded(state.padded())


def cap(fn: PiecewiseMin, bound: float, label: str) -> Constraint:
    return Constraint(fn, "<=", bound, label)


def floor(i: int, value: float, b: int, label: str) -> Constraint | None:
    """``s_i >= value``; ``None`` when ``i`` is outside ``1..b`` (trivially true or vacuous)."""
    if i < 1:
        return None
    return Constraint(PiecewiseMin((_coord(i, 1.0, 0.0, b),)), ">=", value, label)


def _region(label: str, items: Iterable[Constraint | None]) -> RegionSpec:
    cs = tuple(c for c in items if c is not None)
    return RegionSpec(cs, label if cs else "S")


def default_region(spec: LyapunovSpec) -> RegionSpec:
    """The set on which the drift of ``spec`` is claimed to be at most the target."""
    p = spec.params
    n, m, d, L, R, b = p.n, p.m, p.d, p.L, p.R, p.b
    ix = spec.idx
    fam = spec.family
    if fam == "BaseV1":
        return RegionSpec()
    if fam == "Lower_L":
        l, k = ix["l"], ix["k"]
        if l >= k - 1:
            return RegionSpec()
        nxt = LyapunovSpec.make("Lower_L", p, l=l + 1, k=k).function()
        items = [cap(nxt, R, f"L_{l + 1},{k} <= R")]
        items += [floor(q, n - 5.0 * m * n * L / (2.0 * d ** (k - q)), b, f"D1_{q}") for q in range(l + 1, k)]
        return _region(f"C1_{l + 1},{k} & D1", items)
    if fam == "Lower_W":
        l, k = ix["l"], ix["k"]
        if l >= k:
            return RegionSpec()
        nxt = PiecewiseMin((_w_lower(p, l + 1, k),))
        items = [cap(nxt, R, f"W_{l + 1} <= R"), floor(l - 1, n - 5.0 * m * n * L / (2.0 * d ** (k - l + 1)), b, f"D2_{l - 1}")]
        return _region(f"C2_{l + 1} & D2_{l - 1}", items)
    if fam == "Lower_Z":
        i, k = ix["i"], ix["k"]
        if i >= k - 1:
            return RegionSpec()
        nxt = LyapunovSpec.make("Lower_Z", p, i=i + 1, k=k).function()
        items = [cap(nxt, R, f"Z_{i + 1},{k} <= R")]
        items += [floor(q, n - 9.0 * m**2 * n * L / d ** (k - q + 1), b, f"D3_{q}") for q in range(i + 1, k)]
        return _region(f"C3_{i + 1},{k} & D3", items)
    if fam == "Lower_Wtilde":
        j, k = ix["j"], ix["k"]
        if j >= k:
            return RegionSpec()
        nxt = PiecewiseMin((_w_tilde_lower(p, j + 1, k),))
        items = [cap(nxt, R, f"Wt_{j + 1} <= R"), floor(j - 1, n - 9.0 * m**2 * n * L / d ** (k - j + 2), b, f"D4_{j - 1}")]
        return _region(f"C4_{j + 1} & D4_{j - 1}", items)
    if fam == "Upper_LU":
        if "l" in ix:
            return RegionSpec()
        j = ix["j"]
        if j == m:
            items = [
                floor(m - 1, p.lower_band(m - 1), b, f"Dt_{m - 1}") if m > 1 else None,
                cap(PiecewiseMin((_sum_coords(m + 2, b, b),)), p.B_mplus2, f"sum_{{l>={m + 2}}} s_l <= B"),
            ]
            if m + 2 > b:
                items[1] = None
            return _region(f"Dt_{m - 1} & Dt_{m + 2}", items)
        nxt = LyapunovSpec.make("Upper_LU", p, j=j + 1).function()
        items = [cap(nxt, R, f"U_{j + 1} <= R"), floor(j - 1, p.lower_band(j - 1), b, f"Dt1_{j - 1}") if j >= 2 else None]
        return _region(f"Ct1_{j + 1} & Dt1_{j - 1}", items)
    if fam == "TailSum_U":
        bm = b * p.b_term(m)
        items = [
            cap(PiecewiseMin((_coord(m + 1, 1.0, 0.0, b),)), bm, f"s_{m + 1} <= b B_m") if m + 1 <= b else None,
            floor(m + 2, 1.0, b, f"s_{m + 2} >= 1") if m + 2 <= b else None,
        ]
        if m + 2 > b:
            return RegionSpec((Constraint(PiecewiseMin((Affine(0.0),)), ">=", 1.0, "empty"),), "empty")
        return _region(f"s_{m + 1} <= b B_m & s_{m + 2} >= 1", items)
    # Upper_Wtilde
    j = ix["j"]
    if j >= m:
        return RegionSpec()
    nxt = PiecewiseMin((_w_tilde_upper(p, j + 1),))
    return _region(f"Ct2_{j + 1}", [cap(nxt, R, f"Wt_{j + 1} <= R")])


def default_target(spec: LyapunovSpec) -> str:
    return "zero" if spec.family == "TailSum_U" else "template"


def target_value(target: str | float, params: CatalogParams) -> float:
    if isinstance(target, (int, float)) and not isinstance(target, bool):
        return float(target)
    if target == "template":
        return -params.R
    if target == "zero":
        return 0.0
    raise ConfigError(f"drift target must be one of {DRIFT_TARGETS} or a number")


# ---------------------------------------------------------------------------
# drift scans


@dataclass
class ScanReport:
    family: str
    indices: dict
    n: int
    d: float
    m: int
    b: int
    target: float
    region: str
    sampled: int
    in_region: int
    fraction_satisfying: float | None
    max_drift: float | None
    worst_state: list[int] | None
    counterexamples: list[dict] = field(default_factory=list)
    empty_region: bool = False
    seed: int = 0

    @property
    def all_satisfied(self) -> bool:
        return not self.empty_region and self.fraction_satisfying == 1.0

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "indices": self.indices,
            "n": self.n,
            "d": self.d,
            "m": self.m,
            "b": self.b,
            "target": self.target,
            "region": self.region,
            "sampled": self.sampled,
            "in_region": self.in_region,
            "fraction_satisfying": self.fraction_satisfying,
            "max_drift": self.max_drift,
            "worst_state": self.worst_state,
            "counterexamples": self.counterexamples,
            "empty_region": self.empty_region,
            "seed": self.seed,
        }


def _single_coord_bounds(c: Constraint, lo: list[float], hi: list[float]) -> None:
    """Tighten the box with constraints that are one affine branch in one coordinate.

    A ``<=`` cap over a min of several branches is a disjunction and is skipped;
    a ``>=`` floor over a min holds iff every branch satisfies it.
    """
    branches = c.fn.branches
    if c.op == "<=" and len(branches) > 1:
        return
    for br in branches:
        if len(br.coef) > 1:
            # a cap on a positive combination caps every term
            signs = {a > 0 for _, a in br.coef}
            if signs == {c.op == "<="}:
                for i, a in br.coef:
                    if i < len(hi):
                        hi[i] = min(hi[i], (c.bound - br.const) / a)
            continue
        if not br.coef:
            continue
        (i, a), = br.coef
        if i >= len(lo):
            continue
        x = (c.bound - br.const) / a
        le = (c.op == "<=") == (a > 0)  # the constraint reads s_i <= x
        if le:
            hi[i] = min(hi[i], x)
        else:
            lo[i] = max(lo[i], x)


def scan_box(fn: PiecewiseMin, region: RegionSpec, n: int, b: int) -> tuple[list[float], list[float]]:
    """Per-coordinate interval implied by ``V >= 0`` and the single-coordinate constraints."""
    lo = [0.0] * (b + 1)
    hi = [float(n)] * (b + 1)
    _single_coord_bounds(Constraint(fn, ">=", 0.0), lo, hi)
    for c in region.constraints:
        _single_coord_bounds(c, lo, hi)
    return lo, hi


def _feasible_lows(lo: Sequence[float], b: int) -> list[int]:
    """``L_i = max_{j >= i} ceil(lo_j)`` so a monotone completion exists."""
    out = [0] * (b + 2)
    run = 0
    for i in range(b, 0, -1):
        run = max(run, math.ceil(lo[i] - 1e-9))
        out[i] = run
    return out


def _interval(i: int, prev: int, lows: Sequence[int], hi: Sequence[float]) -> tuple[int, int]:
    return lows[i], min(prev, math.floor(hi[i] + 1e-9))


def _corner_states(lo, hi, b: int, n: int, coords: Sequence[int], cap_count: int) -> list[list[int]]:
    """Monotone states taking an end of the feasible interval on each listed coordinate."""
    lows = _feasible_lows(lo, b)
    coords = sorted(c for c in set(coords) if 1 <= c <= b)[:12]
    out = []
    for mask in range(1 << len(coords)):
        choose = {c: (mask >> t) & 1 for t, c in enumerate(coords)}
        p = [n] + [0] * (b + 1)
        ok = True
        for i in range(1, b + 1):
            a, z = _interval(i, p[i - 1], lows, hi)
            if a > z:
                ok = False
                break
            p[i] = z if choose.get(i, 0) else a
        if ok:
            out.append(p)
        if len(out) >= cap_count:
            break
    return out


def _random_state(rng: np.random.Generator, lo, hi, b: int, n: int) -> list[int] | None:
    lows = _feasible_lows(lo, b)
    p = [n] + [0] * (b + 1)
    for i in range(1, b + 1):
        a, z = _interval(i, p[i - 1], lows, hi)
        if a > z:
            return None
        p[i] = _draw(rng, a, z)
    return p


def _draw(rng: np.random.Generator, a: int, z: int) -> int:
    """Integer in ``[a, z]``: uniform half the time, otherwise log-uniformly close to an end."""
    width = z - a
    if width == 0:
        return a
    mode = rng.random()
    if mode < 0.5:
        return a + int(rng.integers(0, width + 1)) if width < 2**62 else a + int(rng.random() * width)
    off = min(width, int(math.expm1(rng.random() * math.log1p(width))))
    return a + off if mode < 0.75 else z - off


def _push_to_boundary(fn: PiecewiseMin, p: list[int], lo, hi, b: int) -> list[int] | None:
    """Move one support coordinate of the attaining branch so that ``V`` is just above zero."""
    v, k = fn.evaluate(p)
    br = fn.branches[k - 1]
    lows = _feasible_lows(lo, b)
    for i, a in br.coef:
        if i > b:
            continue
        # want br(p') in [0, |a|): shift s_i by t with a t = -v
        t = -v / a
        t = math.floor(t) if a > 0 else math.ceil(t)
        q = list(p)
        q[i] = q[i] + t
        a_i, z_i = _interval(i, q[i - 1], lows, hi)
        if a_i <= q[i] <= z_i and (i == b or q[i] >= q[i + 1]):
            return q
    return None


def drift_scan(
    spec: LyapunovSpec,
    config: SystemConfig,
    region: RegionSpec | None = None,
    budget: int = 10_000,
    target: str | float | None = None,
    seed: int = 0,
    max_counterexamples: int = 10,
) -> ScanReport:
    """Sample states with ``V(s) >= 0`` in ``region`` and compare their drift with ``target``.

    Candidates are the corners of the box implied by the single-coordinate
    constraints, then sequential uniform draws inside that box, each also
    pushed onto the ``V = 0`` boundary. Only candidates satisfying every
    constraint are scored. Deterministic given ``seed``.
    """
    p = spec.params
    if p.n != config.n or p.b != config.b:
        raise ConfigError("spec parameters do not match the config")
    if config.n > MAX_SCAN_N:
        raise ConfigError(f"drift scans need n <= 2**53 for float-exact states; got n={config.n}")
    fn = spec.function()
    region = default_region(spec) if region is None else region
    tname = default_target(spec) if target is None else target
    tval = target_value(tname, p)
    n, b = config.n, config.b
    lo, hi = scan_box(fn, region, n, b)
    support = set(fn.support())
    for c in region.constraints:
        support |= c.fn.support()
    touched = sorted({j for i in support for j in (i - 1, i, i + 1) if 1 <= j <= b})
    rng = np.random.default_rng(seed)

    seen: set[tuple[int, ...]] = set()
    scored: list[tuple[float, tuple[int, ...]]] = []
    sampled = 0

    def consider(q: list[int] | None) -> None:
        nonlocal sampled
        if q is None:
            return
        key = tuple(q[1 : b + 1])
        if key in seen:
            return
        seen.add(key)
        sampled += 1
        if fn(q) < 0 or not region.contains_padded(q):
            return
        dr = drift_piecewise(fn, q, n, float(config.d), float(config.lam), b)
        scored.append((dr, key))

    for q in _corner_states(lo, hi, b, n, touched, cap_count=max(1, budget // 4)):
        consider(q)
        consider(_push_to_boundary(fn, q, lo, hi, b))
    attempts = 0
    while sampled < budget and attempts < 4 * budget:
        attempts += 1
        q = _random_state(rng, lo, hi, b, n)
        consider(q)
        if q is not None:
            consider(_push_to_boundary(fn, q, lo, hi, b))

    ix = spec.idx
    if not scored:
        return ScanReport(spec.family, ix, n, float(config.d), p.m, b, tval, region.label, sampled, 0,
                          None, None, None, [], True, seed)
    ok = sum(1 for dr, _ in scored if dr <= tval)
    worst = max(scored, key=lambda t: t[0])
    bad = sorted((t for t in scored if t[0] > tval), key=lambda t: -t[0])[:max_counterexamples]
    return ScanReport(
        family=spec.family,
        indices=ix,
        n=n,
        d=float(config.d),
        m=p.m,
        b=b,
        target=tval,
        region=region.label,
        sampled=sampled,
        in_region=len(scored),
        fraction_satisfying=ok / len(scored),
        max_drift=worst[0],
        worst_state=list(worst[1]),
        counterexamples=[{"state": list(s), "drift": dr} for dr, s in bad],
        empty_region=False,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# iterative tail bound


@dataclass(frozen=True)
class TailBoundInput:
    B: float
    gamma_drift: float
    delta: float
    nu_max: float
    q_max: float
    j: float
    prob_not_E: float = 0.0
    D: float = 0.0

    def __post_init__(self) -> None:
        if self.B < 0 or not self.gamma_drift > 0 or self.delta < 0:
            raise ConfigError("need B >= 0, gamma_drift > 0, delta >= 0")
        if not self.nu_max > 0 or not self.q_max > 0 or not self.j > 0:
            raise ConfigError("need nu_max, q_max, j > 0")
        if not 0.0 <= self.prob_not_E <= 1.0:
            raise ConfigError("prob_not_E must lie in [0, 1]")


@dataclass(frozen=True)
class TailBound:
    alpha: float
    beta: float
    log_alpha: float
    log_bound: float
    level: float  # the bound applies to P(V >= level)

    @property
    def bound(self) -> float:
        return math.exp(self.log_bound)


def ssc_tail_bound(inp: TailBoundInput) -> TailBound:
    """``P(V >= B + 2 nu_max j) <= alpha^j + beta P(not E)`` with the log taken stably."""
    qn = inp.q_max * inp.nu_max
    log_alpha = math.log(qn) - math.log(qn + inp.gamma_drift)
    alpha = math.exp(log_alpha)
    beta = inp.delta / inp.gamma_drift + 1.0
    a = inp.j * log_alpha
    if inp.prob_not_E > 0:
        log_bound = float(np.logaddexp(a, math.log(beta) + math.log(inp.prob_not_E)))
    else:
        log_bound = a
    return TailBound(alpha, beta, log_alpha, log_bound, inp.B + 2.0 * inp.nu_max * inp.j)


def template_tail_input(n: float, m: int, prob_not_E: float = 0.0) -> TailBoundInput:
    """``B = 0``, ``j = R/2``, ``nu_max = 1``, ``q_max = delta = n``, ``gamma_drift = R``."""
    R = math.sqrt(m * n) * math.log(n)
    return TailBoundInput(B=0.0, gamma_drift=R, delta=n, nu_max=1.0, q_max=n, j=R / 2.0, prob_not_E=prob_not_E)


@dataclass
class ExactTailCheck:
    B: float
    gamma_drift: float
    delta: float
    nu_max: float
    q_max: float
    D: float
    prob_not_E: float
    rows: list[dict]

    @property
    def holds(self) -> bool:
        return all(r["holds"] for r in self.rows)


def exact_tail_check(
    config: SystemConfig,
    V: Callable[[StateVector], float],
    in_E: Callable[[StateVector], bool] | None = None,
    B: float | None = None,
    js: Iterable[int] = range(1, 21),
) -> ExactTailCheck:
    """Read the tail-bound constants off the exact generator and test the bound.

    ``B`` defaults to the smallest value ``v`` of ``V`` such that every state
    in ``E`` with ``V >= v`` has strictly negative drift.
    """
    dist = solve_stationary_exact(config)
    states = [StateVector(config.n, s) for s in enumerate_states(config.n, config.b)]
    in_E = in_E or (lambda _s: True)
    vals = {st.s: float(V(st)) for st in states}
    drifts = {st.s: float(drift(V, st, config)) for st in states}
    levels = sorted(set(vals.values()))
    if B is None:
        B = levels[-1]
        for v in reversed(levels):
            if all(drifts[st.s] < 0 for st in states if in_E(st) and vals[st.s] >= v):
                B = v
            else:
                break
    inside = [st for st in states if in_E(st) and vals[st.s] >= B]
    if not inside or max(drifts[st.s] for st in inside) >= 0:
        raise ConfigError("no negative drift above B on E")
    gamma_drift = -max(drifts[st.s] for st in inside)
    outside = [st for st in states if not in_E(st)]
    delta = max([0.0] + [drifts[st.s] for st in outside])
    nu_max = 0.0
    q_max = 0.0
    for st in states:
        up = 0.0
        for nxt, rate in generator_row(st, config):
            jump = vals[nxt.s] - vals[st.s]
            nu_max = max(nu_max, abs(jump))
            if jump > 0:
                up += rate
        q_max = max(q_max, up)
    D = min(vals.values())
    pi = dict(zip(dist.states, dist.probs))
    p_not_E = float(sum(pi[st.s] for st in outside))
    rows = []
    for j in js:
        tb = ssc_tail_bound(TailBoundInput(max(B, 0.0), gamma_drift, delta, nu_max, q_max, j, p_not_E, D))
        lhs = float(sum(pi[s] for s, v in vals.items() if v >= tb.level))
        rows.append({"j": j, "level": tb.level, "prob": lhs, "bound": tb.bound, "holds": lhs <= tb.bound})
    return ExactTailCheck(B, gamma_drift, delta, nu_max, q_max, D, p_not_E, rows)


# ---------------------------------------------------------------------------
# Taylor-type inequalities


def _log_pow(base: float, d: float) -> float:
    return d * math.log(base) if base > 0 else -math.inf


def power_decay_check(d: float, r: float, f: float) -> tuple[bool, float, float]:
    """``(1 - r log d / d + f)^d <= 2 / d^r`` in log space; a non-positive base fails."""
    base = 1.0 - r * math.log(d) / d + f
    rhs = math.log(2.0) - r * math.log(d)
    if base <= 0:
        return False, math.nan, rhs
    lhs = d * math.log1p(-r * math.log(d) / d + f)
    return lhs <= rhs, lhs, rhs


def _bernoulli_gap(d: float, f: float) -> float:
    """``d log(1 - f) - log(1 - d f)`` for ``d f < 1``; the series is used when ``d f`` is small."""
    x = d * f
    if x < 1e-2:
        total = 0.0
        fk = f
        dk = d
        for k in range(2, 60):
            fk *= f
            dk *= d
            term = (dk - d) * fk / k
            total += term
            if term <= 1e-18 * total:
                break
        return total
    return d * math.log1p(-f) - math.log1p(-x)


def bernoulli_lower_check(d: float, f: float) -> bool:
    """``1 - d f <= (1 - f)^d`` for ``d >= 1`` and ``f in [0, 1]``."""
    if d * f >= 1.0:
        return True  # left side <= 0 <= right side
    return _bernoulli_gap(d, f) >= 0.0


def _bernoulli_upper_gap(d: float, f: float) -> float:
    """``1 - d f + d^2 f^2 / 2 - (1 - f)^d`` from the binomial series, for small ``d f``."""
    gap = d * f * f / 2.0
    t = d * (d - 1.0) * f * f / 2.0
    for k in range(3, 60):
        t *= -(d - k + 1.0) * f / k
        gap -= t
        if abs(t) <= 1e-18 * abs(gap):
            break
    return gap


def bernoulli_upper_check(d: float, f: float) -> bool:
    """``(1 - f)^d <= 1 - d f + d^2 f^2 / 2``."""
    rhs = 1.0 - d * f + 0.5 * (d * f) ** 2
    if f >= 1.0:
        return 0.0 <= rhs
    if d * f < 1e-2:
        return _bernoulli_upper_gap(d, f) >= 0.0
    return d * math.log1p(-f) <= math.log(rhs)


def ssc_identity_check(n: float, m: int) -> tuple[bool, float, float]:
    """``(n / (n + R))^(R/2) <= n^(-m log n / 4)`` in log space."""
    R = math.sqrt(m * n) * math.log(n)
    lhs = -(R / 2.0) * math.log1p(R / n)
    rhs = -m * math.log(n) ** 2 / 4.0
    return lhs <= rhs, lhs, rhs


F_FAMILIES: dict[str, Callable[[float], float]] = {
    "zero": lambda d: 0.0,
    "inv_d2": lambda d: 1.0 / d**2,
    "log_d2": lambda d: math.log(d) / d**2,
    "inv_d15": lambda d: d**-1.5,
}


@dataclass
class TaylorGrid:
    check: str
    rows: list[dict]
    threshold: float | None  # smallest grid point from which every later point holds
    violations_below: list[dict]

    @property
    def all_hold(self) -> bool:
        return all(r["holds"] for r in self.rows)


def _threshold(rows: list[dict], key: str) -> tuple[float | None, list[dict]]:
    """Grid value from which all rows (sorted by ``key``) hold, and the failing rows below it."""
    pts = sorted({r[key] for r in rows})
    bad = {r[key] for r in rows if not r["holds"]}
    thr = None
    for x in reversed(pts):
        if x in bad:
            break
        thr = x
    viol = [r for r in rows if not r["holds"]]
    return thr, viol


def taylor_checks(
    d_grid: Sequence[float],
    r_grid: Sequence[float] = (1.0, 2.0, 3.0),
    f_families: Sequence[str] = ("zero", "inv_d2", "log_d2"),
    f_grid: Sequence[float] = tuple(np.linspace(0.0, 1.0, 41)),
    n_grid: Sequence[float] = (),
    m_grid: Sequence[int] = (1, 2, 3),
) -> dict[str, TaylorGrid]:
    """Evaluate the three inequalities on grids.

    ``power_decay`` over ``d x r x f-family``; ``bernoulli_lower`` and
    ``bernoulli_upper`` over ``d x f`` for ``f`` in ``f_grid`` (upper half
    uses the ``f``-families, where ``d f -> 0``); ``ssc_identity`` over
    ``n x m``. Thresholds are taken along ``d`` (resp. ``n``).
    """
    out: dict[str, TaylorGrid] = {}
    rows = []
    for d in d_grid:
        for r in r_grid:
            for name in f_families:
                f = F_FAMILIES[name](d)
                ok, lhs, rhs = power_decay_check(d, r, f)
                rows.append({"d": d, "r": r, "f_family": name, "f": f, "lhs_log": lhs, "rhs_log": rhs, "holds": ok})
    thr, viol = _threshold(rows, "d")
    out["power_decay"] = TaylorGrid("power_decay", rows, thr, viol)

    rows = []
    for d in d_grid:
        for f in f_grid:
            rows.append({"d": d, "f": float(f), "holds": bernoulli_lower_check(d, float(f))})
    thr, viol = _threshold(rows, "d")
    out["bernoulli_lower"] = TaylorGrid("bernoulli_lower", rows, thr, viol)

    rows = []
    for d in d_grid:
        for name in f_families:
            f = F_FAMILIES[name](d)
            rows.append({"d": d, "f_family": name, "f": f, "holds": bernoulli_upper_check(d, f)})
    thr, viol = _threshold(rows, "d")
    out["bernoulli_upper"] = TaylorGrid("bernoulli_upper", rows, thr, viol)

    rows = []
    for n in n_grid:
        for m in m_grid:
            ok, lhs, rhs = ssc_identity_check(n, m)
            rows.append({"n": n, "m": m, "lhs_log": lhs, "rhs_log": rhs, "holds": ok})
    thr, viol = _threshold(rows, "n") if rows else (None, [])
    out["ssc_identity"] = TaylorGrid("ssc_identity", rows, thr, viol)
    return out
