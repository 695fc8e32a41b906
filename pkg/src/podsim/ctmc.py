"""Exact simulation of the Power-of-d occupancy chain.

Two equivalent representations are provided: the aggregate chain over the
occupancy vector (``step_aggregate``, ``simulate``) and the per-queue chain
over individual queue lengths (``step_per_queue``). Tiny instances can be
solved exactly with ``solve_stationary_exact``.

The hot loop lives in a compiled extension when it is available and falls
back to an equivalent pure-Python loop otherwise. Both consume the same
uniform stream in the same order, so they produce identical output.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import ConfigError, StateError, StateVector, SystemConfig, validate_occupancy
from . import _kernel_py

if os.environ.get("PODSIM_KERNEL", "").lower() == "python":
    _compiled = None
else:
    try:
        from . import _kernel as _compiled
    except ImportError:  # extension not built
        _compiled = None

KERNEL = "compiled" if _compiled is not None else "python"

ARRIVAL = "arrival_to_level_i"
DEPARTURE = "departure_from_level_i"


def kernel_impl(name: str | None = None):
    """Return the ``run_chunk`` implementation called ``name``.

    ``None`` picks the one selected at import.
    """
    if name is None:
        name = KERNEL
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled.run_chunk
    if name == "python":
        return _kernel_py.run_chunk
    raise ValueError(f"unknown kernel {name!r}")


# ---------------------------------------------------------------------------
# random numbers


def make_generator(seed: int, rep: int = 0) -> np.random.Generator:
    """Independent Philox stream for replication ``rep`` of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep),))
    return np.random.Generator(np.random.Philox(ss))


class UniformStream:
    """Buffered uniforms on [0, 1) shared by both kernels."""

    def __init__(self, seed: int, rep: int = 0, size: int = 1 << 16):
        self.gen = make_generator(seed, rep)
        self.buf = np.empty(size, dtype=np.float64)
        self.ulist: list[float] = []
        self.pos = size  # empty: the first draw triggers a refill

    def refill(self) -> None:
        self.gen.random(out=self.buf)
        self.ulist = self.buf.tolist()
        self.pos = 0

    def next(self) -> float:
        if self.pos >= self.buf.shape[0]:
            self.refill()
        u = self.ulist[self.pos]
        self.pos += 1
        return u


# ---------------------------------------------------------------------------
# transition structure


@dataclass(frozen=True)
class TransitionClass:
    kind: str
    level: int
    rate: float

    @property
    def delta(self) -> int:
        return 1 if self.kind == ARRIVAL else -1

    @property
    def short(self) -> str:
        return "arrival" if self.kind == ARRIVAL else "departure"


def _require_state(state: StateVector, config: SystemConfig) -> None:
    if state.n != config.n or state.b != config.b:
        raise StateError(
            f"state has n={state.n}, b={state.b}; config has n={config.n}, b={config.b}"
        )


def transition_classes(state: StateVector, config: SystemConfig) -> list[TransitionClass]:
    """All ``2b`` classes with their (possibly zero) rates."""
    _require_state(state, config)
    n, b, d, lam = config.n, config.b, config.d, config.lam
    p = state.padded()
    q = [(p[i] / n) ** d for i in range(b + 2)]
    out = []
    for i in range(1, b + 1):
        out.append(TransitionClass(ARRIVAL, i, lam * (q[i - 1] - q[i])))
    for i in range(1, b + 1):
        out.append(TransitionClass(DEPARTURE, i, float(p[i] - p[i + 1])))
    return out


def apply_transition(state: StateVector, event: TransitionClass) -> StateVector:
    s = list(state.s)
    s[event.level - 1] += event.delta
    return StateVector(state.n, tuple(s))


def generator_row(
    state: StateVector, config: SystemConfig, exact: bool = False
) -> list[tuple[StateVector, float | Fraction]]:
    """Off-diagonal entries ``(s', q(s, s'))`` with positive rate.

    With ``exact`` the rates are :class:`fractions.Fraction` values (``lambda``
    converted exactly from its float value).
    """
    _require_state(state, config)
    n, b, d = config.n, config.b, config.d
    p = state.padded()
    out: list[tuple[StateVector, float | Fraction]] = []
    if exact:
        lam = Fraction(config.lam)
        q = [Fraction(p[i], n) ** d for i in range(b + 2)]
    else:
        lam = config.lam
        q = [(p[i] / n) ** d for i in range(b + 2)]
    for i in range(1, b + 1):
        rate = lam * (q[i - 1] - q[i])
        if rate > 0:
            s = list(state.s)
            s[i - 1] += 1
            out.append((StateVector(n, tuple(s)), rate))
    for i in range(1, b + 1):
        rate = p[i] - p[i + 1]
        if rate > 0:
            s = list(state.s)
            s[i - 1] -= 1
            out.append((StateVector(n, tuple(s)), Fraction(rate) if exact else float(rate)))
    return out


def step_aggregate(
    state: StateVector, config: SystemConfig, rng
) -> tuple[float, StateVector, TransitionClass | None]:
    """One Gillespie step of the aggregate chain.

    ``rng`` is a :class:`UniformStream` or anything with a ``random()``
    method returning uniforms on [0, 1). Returns ``(inf, state, None)`` for an
    absorbing state.
    """
    _require_state(state, config)
    draw = rng.next if hasattr(rng, "next") else rng.random
    classes = transition_classes(state, config)
    total = math.fsum(c.rate for c in classes)
    if total <= 0:
        return math.inf, state, None
    dt = -math.log(1.0 - draw()) / total
    x = draw() * total
    acc = 0.0
    chosen = None
    for c in classes:
        if c.rate <= 0:
            continue
        acc += c.rate
        chosen = c
        if x < acc:
            break
    return dt, apply_transition(state, chosen), chosen


# ---------------------------------------------------------------------------
# per-queue representation


def _validate_lengths(queues: Sequence[int], b: int) -> None:
    if any(q < 0 or q > b for q in queues):
        raise StateError(f"queue lengths must lie in [0, {b}]")


def join_target(samples: Sequence[int], queues: Sequence[int], b: int) -> int | None:
    """Index the arrival joins: first-sampled among the shortest, or None if dropped."""
    best = samples[0]
    for idx in samples[1:]:
        if queues[idx] < queues[best]:
            best = idx
    if queues[best] >= b:
        return None
    return best


def step_per_queue(
    queues: Sequence[int], config: SystemConfig, rng: np.random.Generator
) -> tuple[float, list[int], TransitionClass | None]:
    """One step of the per-queue chain.

    Event classes: one aggregate arrival stream of rate ``lambda`` and the
    busy-server departures at unit rate each. Returns the induced aggregate
    transition (``None`` for a dropped arrival or an absorbing state).
    """
    n, b, d, lam = config.n, config.b, config.d, config.lam
    if len(queues) != n:
        raise StateError("need one length per server")
    _validate_lengths(queues, b)
    queues = list(queues)
    busy = sum(1 for q in queues if q > 0)
    total = lam + busy
    if total <= 0:
        return math.inf, queues, None
    dt = rng.exponential(1.0 / total)
    if rng.random() * total < lam:
        samples = rng.integers(0, n, size=d).tolist()
        target = join_target(samples, queues, b)
        if target is None:
            return dt, queues, None
        queues[target] += 1
        return dt, queues, TransitionClass(ARRIVAL, queues[target], lam)
    busy_idx = [k for k, q in enumerate(queues) if q > 0]
    k = busy_idx[int(rng.integers(0, len(busy_idx)))]
    level = queues[k]
    queues[k] -= 1
    return dt, queues, TransitionClass(DEPARTURE, level, 1.0)


def per_queue_induced_rates(
    queues: Sequence[int], config: SystemConfig
) -> dict[tuple[int, ...], Fraction]:
    """Exact rates the per-queue chain induces on the occupancy vector.

    Enumerates all ``n^d`` ordered sample tuples, each with probability
    ``n^-d``. Dropped arrivals induce no transition and are omitted.
    """
    n, b, d = config.n, config.b, config.d
    _validate_lengths(queues, b)
    lam = Fraction(config.lam)
    rates: dict[tuple[int, ...], Fraction] = {}
    weight = lam / Fraction(n) ** d
    for samples in itertools.product(range(n), repeat=d):
        target = join_target(samples, queues, b)
        if target is None:
            continue
        nxt = list(queues)
        nxt[target] += 1
        key = _occupancy(nxt, b)
        rates[key] = rates.get(key, Fraction(0)) + weight
    for k, q in enumerate(queues):
        if q > 0:
            nxt = list(queues)
            nxt[k] -= 1
            key = _occupancy(nxt, b)
            rates[key] = rates.get(key, Fraction(0)) + 1
    return rates


def _occupancy(queues: Sequence[int], b: int) -> tuple[int, ...]:
    return tuple(sum(1 for q in queues if q >= i) for i in range(1, b + 1))


def simulate_per_queue(
    config: SystemConfig, n_events: int, rep: int = 0, queues: Sequence[int] | None = None
) -> "Trajectory":
    """Event-by-event per-queue simulation, reduced to occupancy accumulators.

    Slow; meant for cross-checking the aggregate simulator on small ``n``.
    """
    if n_events <= 0:
        raise ConfigError("horizon must be positive")
    rng = make_generator(config.seed, rep)
    q = [0] * config.n if queues is None else list(queues)
    times = [0.0]
    states = [_occupancy(q, config.b)]
    t = 0.0
    for _ in range(n_events):
        dt, q, _ev = step_per_queue(q, config, rng)
        if not math.isfinite(dt):
            break
        t += dt
        times.append(t)
        states.append(_occupancy(q, config.b))
    return Trajectory.from_path(config, times, states, t_end=t)


# ---------------------------------------------------------------------------
# exact stationary solve


@dataclass(frozen=True)
class StationaryDistribution:
    n: int
    b: int
    states: tuple[tuple[int, ...], ...]
    probs: np.ndarray
    residual: float

    def expectation(self, fn) -> float:
        return math.fsum(p * fn(s) for s, p in zip(self.states, self.probs))

    def prob(self, predicate) -> float:
        return math.fsum(p for s, p in zip(self.states, self.probs) if predicate(s))

    def tail_matrix(self) -> np.ndarray:
        """``P(s_i >= k)`` as a ``(b, n + 1)`` array (row ``i - 1``, column ``k``)."""
        out = np.zeros((self.b, self.n + 1))
        for s, p in zip(self.states, self.probs):
            for i, v in enumerate(s):
                out[i, : v + 1] += p
        return out

    def to_records(self) -> list[dict]:
        return [{"state": list(s), "prob": float(p)} for s, p in zip(self.states, self.probs)]


def enumerate_states(n: int, b: int) -> list[tuple[int, ...]]:
    """All ``n >= s_1 >= ... >= s_b >= 0`` in lexicographic order."""
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], cap: int) -> None:
        if len(prefix) == b:
            out.append(tuple(prefix))
            return
        for v in range(cap + 1):
            prefix.append(v)
            rec(prefix, v)
            prefix.pop()

    rec([], n)
    return out


def state_space_size(n: int, b: int) -> int:
    return math.comb(n + b, b)


def generator_matrix(config: SystemConfig, states: Sequence[tuple[int, ...]] | None = None):
    if states is None:
        states = enumerate_states(config.n, config.b)
    index = {s: k for k, s in enumerate(states)}
    rows, cols, vals = [], [], []
    for k, s in enumerate(states):
        out = 0.0
        for nxt, rate in generator_row(StateVector(config.n, s), config):
            rows.append(k)
            cols.append(index[nxt.s])
            vals.append(rate)
            out += rate
        rows.append(k)
        cols.append(k)
        vals.append(-out)
    N = len(states)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N)), list(states)


def solve_stationary_exact(config: SystemConfig, max_states: int = 200_000) -> StationaryDistribution:
    """Solve ``pi Q = 0``, ``sum(pi) = 1`` by a direct sparse solve."""
    size = state_space_size(config.n, config.b)
    if size > max_states:
        raise ConfigError(f"state space has {size} states, above max_states={max_states}")
    Q, states = generator_matrix(config)
    N = len(states)
    A = Q.T.tolil()
    A[N - 1, :] = np.ones(N)
    rhs = np.zeros(N)
    rhs[N - 1] = 1.0
    if N == 1:
        pi = np.ones(1)
    else:
        pi = spla.spsolve(A.tocsc(), rhs)
    pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    residual = float(np.max(np.abs(Q.T @ pi))) if N > 1 else 0.0
    if residual > 1e-10:
        raise ConfigError(f"stationary residual {residual:.3e} above 1e-10")
    return StationaryDistribution(config.n, config.b, tuple(states), pi, residual)


# ---------------------------------------------------------------------------
# long runs


@dataclass
class BandBox:
    """Per-index acceptance interval plus a cap on ``sum_{l >= tail_start} s_l``.

    ``lo``/``hi`` are indexed ``1..b`` (padded to length ``b + 2``).
    """

    lo: np.ndarray
    hi: np.ndarray
    tail_start: int
    tail_cap: float

    @classmethod
    def trivial(cls, n: int, b: int) -> "BandBox":
        return cls(np.zeros(b + 2), np.full(b + 2, float(n)), b + 1, math.inf)

    def contains(self, s: Sequence[int]) -> tuple[list[bool], bool, bool]:
        b = len(s)
        per = [bool(self.lo[i] <= s[i - 1] <= self.hi[i]) for i in range(1, b + 1)]
        tail = sum(s[self.tail_start - 1:]) if self.tail_start <= b else 0
        tail_ok = tail <= self.tail_cap
        return per, tail_ok, all(per) and tail_ok

    def to_dict(self) -> dict:
        return {
            "lo": self.lo[1:-1].tolist(),
            "hi": self.hi[1:-1].tolist(),
            "tail_start": self.tail_start,
            "tail_cap": self.tail_cap,
        }


class _Accumulator:
    def __init__(self, b: int, n: int, box: BandBox, hist: bool):
        self.lo = np.ascontiguousarray(box.lo, dtype=np.float64)
        self.hi = np.ascontiguousarray(box.hi, dtype=np.float64)
        self.tail_start = int(box.tail_start)
        self.tail_cap = float(box.tail_cap)
        self.int_s = np.zeros(b + 2)
        self.band = np.zeros(b + 2)
        self.int_qb = 0.0
        self.joint = 0.0
        self.hist = np.zeros((b + 2, n + 1)) if hist else np.zeros((0, 0))


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    state: StateVector
    event: TransitionClass | None = None


@dataclass
class Trajectory:
    """Chunked record of one run.

    Each chunk stores its duration and the time integrals needed for
    time-weighted estimates; ``states[k]`` is the state at the end of chunk
    ``k`` and ``start_state`` the initial one.
    """

    config: SystemConfig
    start_state: tuple[int, ...]
    durations: np.ndarray  # (K,)
    events: np.ndarray  # (K,)
    end_times: np.ndarray  # (K,)
    states: np.ndarray  # (K, b)
    int_s: np.ndarray  # (K, b)
    int_qb: np.ndarray  # (K,)
    band: np.ndarray  # (K, b + 1) per-index then tail
    joint: np.ndarray  # (K,)
    hist: np.ndarray | None  # (K, b, n + 1) or None
    box: BandBox
    kernel: str = "python"
    rep: int = 0
    absorbed: bool = False

    @property
    def total_time(self) -> float:
        return float(self.durations.sum())

    @property
    def total_events(self) -> int:
        return int(self.events.sum())

    def samples(self) -> Iterator[TrajectorySample]:
        n = self.config.n
        yield TrajectorySample(0.0, StateVector(n, self.start_state))
        for t, s in zip(self.end_times, self.states):
            yield TrajectorySample(float(t), StateVector(n, tuple(int(v) for v in s)))

    @classmethod
    def from_path(
        cls,
        config: SystemConfig,
        times: Sequence[float],
        states: Sequence[Sequence[int]],
        t_end: float | None = None,
        n_chunks: int | None = None,
        box: BandBox | None = None,
        hist: bool | None = None,
    ) -> "Trajectory":
        """Build chunk accumulators from a piecewise-constant path.

        ``states[k]`` holds on ``[times[k], times[k+1])``; the last state holds
        until ``t_end``. Chunks split the interval ``[times[0], t_end]`` into
        equal-time pieces.
        """
        n, b = config.n, config.b
        times = [float(t) for t in times]
        states = [tuple(int(v) for v in s) for s in states]
        for s in states:
            validate_occupancy(s, n)
        t0 = times[0]
        t_end = times[-1] if t_end is None else float(t_end)
        if t_end <= t0:
            raise ConfigError("path must cover positive time")
        if n_chunks is None:
            n_chunks = 320
        if box is None:
            box = BandBox.trivial(n, b)
        if hist is None:
            hist = n + 1 <= HIST_MAX_LEVELS
        edges = np.linspace(t0, t_end, n_chunks + 1)
        K = n_chunks
        durations = np.diff(edges)
        int_s = np.zeros((K, b))
        int_qb = np.zeros(K)
        band = np.zeros((K, b + 1))
        joint = np.zeros(K)
        H = np.zeros((K, b, n + 1)) if hist else None
        end_states = np.zeros((K, b), dtype=np.int64)
        seg_end = times[1:] + [t_end]
        k = 0
        for s, a, z in zip(states, times, seg_end):
            z = min(z, t_end)
            per, tail_ok, all_ok = box.contains(s)
            qb = (s[-1] / n) ** config.d
            while a < z and k < K:
                hi_edge = edges[k + 1]
                piece = min(z, hi_edge) - a
                if piece > 0:
                    int_s[k] += np.asarray(s) * piece
                    int_qb[k] += qb * piece
                    band[k, :b] += np.asarray(per) * piece
                    band[k, b] += piece * tail_ok
                    joint[k] += piece * all_ok
                    if H is not None:
                        for i, v in enumerate(s):
                            H[k, i, v] += piece
                    end_states[k] = s
                if z >= hi_edge:
                    k += 1
                    a = hi_edge
                else:
                    a = z
        return cls(
            config=config,
            start_state=states[0],
            durations=durations,
            events=np.zeros(K, dtype=np.int64),
            end_times=edges[1:] - t0,
            states=end_states,
            int_s=int_s,
            int_qb=int_qb,
            band=band,
            joint=joint,
            hist=H,
            box=box,
        )


HIST_MAX_LEVELS = 65


@dataclass(frozen=True)
class SnapshotPolicy:
    """Chunking of a run: every ``every_events`` events, every ``every_time``
    units of simulated time, or ``n_chunks`` equal pieces of the horizon."""

    every_events: int | None = None
    every_time: float | None = None
    n_chunks: int = 320


def simulate(
    config: SystemConfig,
    events: int | None = None,
    time: float | None = None,
    policy: SnapshotPolicy | None = None,
    rep: int = 0,
    box: BandBox | None = None,
    state: StateVector | None = None,
    hist: bool | None = None,
    kernel: str | None = None,
) -> Trajectory:
    """Simulate the aggregate chain for ``events`` transitions or ``time`` units.

    Reproducible from ``(config.seed, rep)``. The returned trajectory holds
    one snapshot per chunk along with the time integrals used by
    :mod:`podsim.stats`.
    """
    if (events is None) == (time is None):
        raise ConfigError("give exactly one of events or time")
    if events is not None and events <= 0:
        raise ConfigError("horizon must be positive")
    if time is not None and not time > 0:
        raise ConfigError("horizon must be positive")
    policy = policy or SnapshotPolicy()
    n, b = config.n, config.b
    if state is None:
        state = StateVector.empty(n, b)
    _require_state(state, config)
    if box is None:
        box = BandBox.trivial(n, b)
    if hist is None:
        hist = n + 1 <= HIST_MAX_LEVELS
    run = kernel_impl(kernel)
    kernel_name = kernel or KERNEL

    # chunk plan: list of (max_events, t_limit)
    plan: list[tuple[int, float]] = []
    if events is not None:
        if policy.every_events:
            size = int(policy.every_events)
        elif policy.every_time:
            raise ConfigError("time-grid snapshots need a time horizon")
        else:
            size = max(1, -(-events // policy.n_chunks))
        left = events
        while left > 0:
            plan.append((min(size, left), math.inf))
            left -= size
    else:
        if policy.every_events:
            raise ConfigError("event-count snapshots need an event horizon")
        step = policy.every_time or time / policy.n_chunks
        k = int(math.ceil(time / step - 1e-12))
        for j in range(k):
            end = min(time, (j + 1) * step)
            start = j * step
            plan.append((2**62, end - start))

    stream = UniformStream(config.seed, rep)
    s = np.array(state.padded(), dtype=np.int64)
    K = len(plan)
    durations = np.zeros(K)
    n_events = np.zeros(K, dtype=np.int64)
    end_times = np.zeros(K)
    snap = np.zeros((K, b), dtype=np.int64)
    int_s = np.zeros((K, b))
    int_qb = np.zeros(K)
    band = np.zeros((K, b + 1))
    joint = np.zeros(K)
    H = np.zeros((K, b, n + 1)) if hist else None
    t = 0.0
    absorbed = False
    used = 0
    for k, (max_ev, t_lim) in enumerate(plan):
        acc = _Accumulator(b, n, box, hist)
        ev, elapsed, absorbed = run(s, n, config.d, float(config.lam), b, max_ev, t_lim, stream, acc)
        t += elapsed
        durations[k] = elapsed
        n_events[k] = ev
        end_times[k] = t
        snap[k] = s[1 : b + 1]
        int_s[k] = acc.int_s[1 : b + 1]
        int_qb[k] = acc.int_qb
        band[k] = acc.band[1 : b + 2]
        joint[k] = acc.joint
        if H is not None:
            H[k] = acc.hist[1 : b + 1]
        used = k + 1
        if absorbed and not math.isfinite(t_lim):
            break
    sl = slice(0, used)
    return Trajectory(
        config=config,
        start_state=tuple(state.s),
        durations=durations[sl],
        events=n_events[sl],
        end_times=end_times[sl],
        states=snap[sl],
        int_s=int_s[sl],
        int_qb=int_qb[sl],
        band=band[sl],
        joint=joint[sl],
        hist=None if H is None else H[sl],
        box=box,
        kernel=kernel_name,
        rep=rep,
        absorbed=absorbed,
    )


def simulate_events(
    config: SystemConfig, n_events: int, rep: int = 0, state: StateVector | None = None
) -> Iterator[TrajectorySample]:
    """Per-event sample stream (pure Python; for small runs and CSV traces).

    Draws from the same uniform stream as :func:`simulate`, so the visited
    states coincide with those of the chunked simulator.
    """
    if n_events <= 0:
        raise ConfigError("horizon must be positive")
    stream = UniformStream(config.seed, rep)
    st = state or StateVector.empty(config.n, config.b)
    t = 0.0
    yield TrajectorySample(t, st, None)
    for _ in range(n_events):
        dt, st, ev = _step_kernel_order(st, config, stream)
        if ev is None:
            return
        t += dt
        yield TrajectorySample(t, st, ev)


def _step_kernel_order(state: StateVector, config: SystemConfig, stream: UniformStream):
    """One step with the exact selection rule used by the chunk kernels."""
    n, b, lam, d = config.n, config.b, float(config.lam), float(config.d)
    p = state.padded()
    q = [(p[i] / n) ** d for i in range(b + 2)]
    q[0], q[b + 1] = 1.0, 0.0
    total_arr = lam * (1.0 - q[b])
    total = total_arr + p[1]
    if total <= 0:
        return math.inf, state, None
    u1 = stream.next()
    u2 = stream.next()
    dt = -math.log(1.0 - u1) / total
    x = u2 * total
    s = list(p)
    if x < total_arr:
        i = 1
        while i < b and lam * (1.0 - q[i]) <= x:
            i += 1
        s[i] += 1
        ev = TransitionClass(ARRIVAL, i, lam * (q[i - 1] - q[i]))
    else:
        y = x - total_arr
        i = 1
        while i < b and s[1] - s[i + 1] <= y:
            i += 1
        while s[i] == s[i + 1]:
            i -= 1
        ev = TransitionClass(DEPARTURE, i, float(s[i] - s[i + 1]))
        s[i] -= 1
    return dt, StateVector(n, tuple(s[1 : b + 1])), ev
