"""N-player dynamics on count states: exact forward laws, thinning simulation, tagged pairs.

Players are exchangeable, so a configuration is the count vector ``n`` with
``sum(n) = N``. A single move ``n -> n - e_i + e_j`` happens at rate
``n_i * nu_j(t, i, n / N) * u(i)_j`` under the common state policy ``u``.

States are listed in colexicographic order (last coordinate slowest) and
ranked in O(k) with the combinatorial number system.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DomainError, IntegrationInstabilityError, UsageError
from .generator import default_dt, grid_steps
from .hjb import maximize_box
from .model import majorant
from .policy import policy_batch

DEFAULT_CAPACITY = 2_000_000
NEG_TOL = 1e-8
CLAMP_TOL = 1e-9


def state_capacity():
    """State-count cap; the ``MFG_CAPACITY`` environment variable overrides the default."""
    raw = os.environ.get("MFG_CAPACITY")
    if raw is None:
        return DEFAULT_CAPACITY
    try:
        cap = int(float(raw))
    except ValueError:
        raise UsageError(f"MFG_CAPACITY must be an integer, got {raw!r}") from None
    if cap < 1:
        raise UsageError("MFG_CAPACITY must be positive")
    return cap


def count_space_size(k, N):
    return math.comb(N + k - 1, k - 1)


def _check_capacity(size, what, capacity=None):
    cap = state_capacity() if capacity is None else capacity
    if size > cap:
        raise CapacityError(f"{what} has {size} states, above the capacity {cap}; "
                            "use Monte Carlo or raise MFG_CAPACITY")


@dataclass(frozen=True)
class CountState:
    n: tuple

    def __post_init__(self):
        if any(int(v) != v or v < 0 for v in self.n):
            raise DomainError(f"counts must be nonnegative integers, got {self.n}")
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))

    @property
    def N(self):
        return sum(self.n)

    @property
    def k(self):
        return len(self.n)

    @property
    def empirical(self):
        return np.asarray(self.n, dtype=float) / self.N


@dataclass(frozen=True)
class TaggedState:
    tagged: int
    rest: CountState

    @property
    def empirical(self):
        """Occupation fractions of all players, the tagged one included."""
        n = np.asarray(self.rest.n, dtype=float)
        n[self.tagged] += 1
        return n / n.sum()


def _compositions(k, N):
    if k == 1:
        return np.array([[N]], dtype=np.int64)
    blocks = []
    for last in range(N + 1):
        head = _compositions(k - 1, N - last)
        blocks.append(np.hstack([head, np.full((len(head), 1), last, dtype=np.int64)]))
    return np.vstack(blocks)


def count_state_array(k, N, capacity=None):
    """All compositions of ``N`` into ``k`` parts as an ``(S, k)`` integer array, colex order."""
    if k < 2 or N < 0:
        raise DomainError(f"need k >= 2 and N >= 0, got k={k}, N={N}")
    _check_capacity(count_space_size(k, N), f"count space (k={k}, N={N})", capacity)
    return _compositions(k, N)


def enumerate_count_states(k, N, capacity=None):
    if N < 1:
        raise DomainError(f"need N >= 1, got {N}")
    return [CountState(tuple(row)) for row in count_state_array(k, N, capacity).tolist()]


class _Binomials:
    """Table ``C(a, b)`` for ``a <= amax``, ``b <= bmax`` in int64."""

    def __init__(self, amax, bmax):
        table = np.zeros((amax + 1, bmax + 1), dtype=np.int64)
        table[:, 0] = 1
        for a in range(1, amax + 1):
            table[a, 1:] = table[a - 1, 1:] + table[a - 1, :-1]
        self.table = table

    def __call__(self, a, b):
        return self.table[a, b]


def rank_counts(n, binom=None):
    """Colex rank of count vectors along the last axis (vectorized)."""
    n = np.asarray(n, dtype=np.int64)
    k = n.shape[-1]
    remaining = n.sum(axis=-1)
    if binom is None:
        binom = _Binomials(int(remaining.max(initial=0)) + k, k)
    rank = np.zeros(n.shape[:-1], dtype=np.int64)
    for p in range(k, 1, -1):
        c = n[..., p - 1]
        rank += binom(remaining + p - 1, p - 1) - binom(remaining - c + p - 1, p - 1)
        remaining = remaining - c
    return rank


def nearest_counts(x0, N):
    """Largest-remainder rounding of ``N * x0`` to a composition of ``N``.

    Ties in the fractional parts go to the lower state index, which keeps
    the result deterministic.
    """
    x0 = np.asarray(x0, dtype=float)
    raw = N * x0
    base = np.floor(raw + 1e-12).astype(np.int64)
    base = np.minimum(base, N)
    short = N - int(base.sum())
    if short < 0:
        raise DomainError("x0 is not a probability vector")
    order = sorted(range(len(x0)), key=lambda l: (-(raw[l] - base[l]), l))
    for l in order[:short]:
        base[l] += 1
    return CountState(tuple(base.tolist()))


def _as_counts(n0, k, N):
    n = np.asarray(n0.n if isinstance(n0, CountState) else n0, dtype=np.int64)
    if n.shape != (k,) or n.sum() != N or np.any(n < 0):
        raise DomainError(f"initial counts {n.tolist()} are not a composition of N={N} into k={k} parts")
    return n


def _pairs(k):
    pi, pj = zip(*[(i, j) for i in range(k) for j in range(k) if i != j])
    return np.array(pi), np.array(pj)


class EmpiricalGenerator:
    """Sparse generator of the count process for a common state policy.

    Move ``p`` of state ``s`` goes ``n -> n - e_pi[p] + e_pj[p]``;
    ``targets[s, p]`` is its index (``s`` itself where ``n_i = 0``, with
    rate zero).
    """

    def __init__(self, spec, policy, N, capacity=None):
        if N < 1:
            raise DomainError(f"need N >= 1, got {N}")
        self.spec = spec
        self.policy = policy
        self.N = N
        k = spec.k
        self.states = count_state_array(k, N, capacity)
        self.size = len(self.states)
        self.X = self.states / N
        self.pi, self.pj = _pairs(k)
        moved = self.states[:, None, :].repeat(len(self.pi), axis=1)
        P = np.arange(len(self.pi))
        moved[:, P, self.pi] -= 1
        moved[:, P, self.pj] += 1
        self.movers = self.states[:, self.pi].astype(float)
        ok = self.movers > 0
        binom = _Binomials(N + k, k)
        self.targets = np.where(ok, rank_counts(np.maximum(moved, 0), binom),
                                np.arange(self.size)[:, None])
        self._binom = binom

    def index(self, n):
        n = _as_counts(n, self.spec.k, self.N)
        return int(rank_counts(n, self._binom))

    def move_rates(self, t, U=None):
        """``(S, P)`` array of move rates at time ``t``."""
        U = np.asarray(self.policy(t) if U is None else U, dtype=float)
        NU = self.spec.rates_batch(t, self.X)
        return self.movers * NU[:, self.pi, self.pj] * U[self.pi, self.pj]

    def row(self, t, index):
        """Sparse row: list of ``(target index, rate)`` with positive rate."""
        R = self.move_rates(t)[index]
        return [(int(self.targets[index, p]), float(R[p])) for p in range(len(R)) if R[p] > 0]

    def left_apply(self, p, t, R=None):
        """``p Q_N(t)`` for a row vector ``p``."""
        R = self.move_rates(t) if R is None else R
        inflow = np.bincount(self.targets.ravel(), weights=(p[:, None] * R).ravel(), minlength=self.size)
        return inflow - p * R.sum(axis=1)

    def right_apply(self, f, t, R=None):
        """``Q_N(t) f`` for a column vector ``f``."""
        R = self.move_rates(t) if R is None else R
        return (R * (f[self.targets] - f[:, None])).sum(axis=1)

    def dense(self, t):
        """Dense ``(S, S)`` matrix; for tests and small spaces."""
        R = self.move_rates(t)
        Q = np.zeros((self.size, self.size))
        np.add.at(Q, (np.arange(self.size)[:, None].repeat(R.shape[1], 1), self.targets), R)
        Q[np.diag_indices(self.size)] -= R.sum(axis=1)
        return Q


def build_empirical_generator(spec, policy, N, deviator=None, capacity=None):
    if deviator is not None:
        raise UsageError("a deviating player breaks exchangeability; use TaggedGenerator")
    return EmpiricalGenerator(spec, policy, N, capacity)


@dataclass(eq=False)
class MarginalLaw:
    """Law of the count process at ``t1``; ``path`` holds the laws at every grid node if requested."""

    states: np.ndarray
    probs: np.ndarray
    N: int
    times: np.ndarray = None
    path: np.ndarray = None

    def mean_empirical(self):
        return self.probs @ (self.states / self.N)

    def expect(self, F):
        """``E[F(n / N)]`` for a callable on simplex vectors."""
        vals = np.array([F(x) for x in self.states / self.N])
        return float(self.probs @ vals)

    def variance(self, F):
        vals = np.array([F(x) for x in self.states / self.N])
        m = self.probs @ vals
        return float(self.probs @ (vals - m) ** 2)


def _guard(p, t):
    lo = p.min()
    if lo < 0:
        if lo < -NEG_TOL:
            raise IntegrationInstabilityError(f"probability {lo:.3g} at t={t:g}; try a smaller dt")
        if lo >= -CLAMP_TOL:
            p = np.maximum(p, 0.0)
            p = p / p.sum()
    return p


def exact_marginal_law(spec, policy, N, n0, t0=0.0, t1=None, dt=None, keep_path=False, capacity=None):
    """Forward equation ``p' = p Q_N(t)`` from a point mass at ``n0`` (RK4, fixed step)."""
    t1 = spec.horizon if t1 is None else t1
    gen = EmpiricalGenerator(spec, policy, N, capacity)
    p = np.zeros(gen.size)
    p[gen.index(n0)] = 1.0
    n = grid_steps(t0, t1, dt or default_dt(spec))
    times = np.linspace(t0, t1, n + 1)
    path = np.empty((n + 1, gen.size)) if keep_path else None
    if keep_path:
        path[0] = p
    for m in range(n):
        s, h = times[m], times[m + 1] - times[m]
        Rmid = gen.move_rates(s + h / 2)
        k1 = gen.left_apply(p, s)
        k2 = gen.left_apply(p + h / 2 * k1, s, Rmid)
        k3 = gen.left_apply(p + h / 2 * k2, s, Rmid)
        k4 = gen.left_apply(p + h * k3, times[m + 1])
        p = _guard(p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), times[m + 1])
        if keep_path:
            path[m + 1] = p
    return MarginalLaw(gen.states, p, N, times if keep_path else None, path)


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def at(self, t):
        """Count vector in force at time ``t`` (right-continuous)."""
        m = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(m, 0)]


def _clock_rate(spec, N):
    umax = float(np.max(spec.control_set.hi))
    return N * majorant(spec) * umax * (spec.k - 1)


def simulate_ctmc(spec, policy, N, n0, t0=0.0, t1=None, seed=0):
    """One trajectory by thinning against the clock rate ``N nu_max u_max (k - 1)``.

    Each candidate picks a move with probability ``rate / clock``; the
    remaining mass rejects. The seeded generator makes the trajectory a
    pure function of the arguments.
    """
    t1 = spec.horizon if t1 is None else t1
    k = spec.k
    n = _as_counts(n0, k, N).copy()
    rng = np.random.default_rng(seed)
    lam = _clock_rate(spec, N)
    times, states = [t0], [n.copy()]
    if lam <= 0:
        return Trajectory(np.array(times), np.array(states))
    pi, pj = _pairs(k)
    t = t0
    while True:
        t += rng.exponential(1.0 / lam)
        if t > t1:
            break
        U = np.asarray(policy(t))
        R = n[pi] * spec.rates(t, n / N)[pi, pj] * U[pi, pj]
        total = R.sum()
        if total > lam * (1 + 1e-12):
            raise IntegrationInstabilityError(
                f"total rate {total:.6g} exceeds the thinning clock {lam:.6g}; declare a rate bound")
        r = rng.uniform(0.0, lam)
        c = np.cumsum(R)
        p = int(np.searchsorted(c, r, side="right"))
        if p < len(R):
            n[pi[p]] -= 1
            n[pj[p]] += 1
            times.append(t)
            states.append(n.copy())
    return Trajectory(np.array(times), np.array(states))


def simulate_endpoints(spec, policy, N, n0, t0=0.0, t1=None, replications=1000, seed=0):
    """Count vectors at ``t1`` for many independent replications, simulated in lockstep.

    The thinning rule of :func:`simulate_ctmc` is applied to every live
    replication at once; all draws come from one generator seeded with
    ``seed``, so the output array is a pure function of the arguments.
    """
    t1 = spec.horizon if t1 is None else t1
    k = spec.k
    n = np.tile(_as_counts(n0, k, N), (replications, 1))
    rng = np.random.default_rng(seed)
    lam = _clock_rate(spec, N)
    if lam <= 0:
        return n
    pi, pj = _pairs(k)
    t = np.full(replications, float(t0))
    live = np.arange(replications)
    while live.size:
        t[live] += rng.exponential(1.0 / lam, size=live.size)
        live = live[t[live] <= t1]
        if not live.size:
            break
        tl, nl = t[live], n[live]
        U = policy_batch(policy, tl)
        NU = spec.rates_batch(tl, nl / N)
        R = nl[:, pi] * NU[:, pi, pj] * U[:, pi, pj]
        c = np.cumsum(R, axis=1)
        if np.any(c[:, -1] > lam * (1 + 1e-12)):
            raise IntegrationInstabilityError("total rate exceeds the thinning clock; declare a rate bound")
        r = rng.uniform(0.0, lam, size=live.size)
        p = (c <= r[:, None]).sum(axis=1)
        hit = p < len(pi)
        rows, moves = live[hit], p[hit]
        n[rows, pi[moves]] -= 1
        n[rows, pj[moves]] += 1
    return n


class TaggedGenerator:
    """Generator of ``(tagged state, counts of the other N - 1 players)``.

    Index of ``(j, r)`` is ``j * S_rest + rank(r)``. Rates and costs see the
    empirical vector of all ``N`` players, the tagged one included.
    """

    def __init__(self, spec, N, capacity=None):
        if N < 1:
            raise DomainError(f"need N >= 1, got {N}")
        k = spec.k
        self.spec = spec
        self.N = N
        _check_capacity(k * count_space_size(k, N - 1), f"tagged space (k={k}, N={N})", capacity)
        rest = count_state_array(k, N - 1, capacity)
        S = len(rest)
        self.rest_size = S
        self.size = k * S
        self.tag = np.repeat(np.arange(k), S)
        self.rest = np.tile(rest, (k, 1))
        full = self.rest.copy()
        full[np.arange(self.size), self.tag] += 1
        self.X = full / N
        base = self.tag * S
        ridx = np.tile(np.arange(S), k)
        # tagged player jumping to l lands at l * S + same rest index
        self.tag_targets = np.arange(k)[None, :] * S + ridx[:, None]
        self.pi, self.pj = _pairs(k)
        P = np.arange(len(self.pi))
        moved = self.rest[:, None, :].repeat(len(self.pi), axis=1)
        moved[:, P, self.pi] -= 1
        moved[:, P, self.pj] += 1
        self.movers = self.rest[:, self.pi].astype(float)
        binom = _Binomials(N + k, k)
        self.rest_targets = np.where(self.movers > 0,
                                     base[:, None] + rank_counts(np.maximum(moved, 0), binom),
                                     np.arange(self.size)[:, None])
        self._binom = binom
        self._rows = np.arange(self.size)

    def index(self, j, rest):
        r = _as_counts(rest, self.spec.k, self.N - 1)
        return int(j * self.rest_size + rank_counts(r, self._binom))

    def coefficients(self, t):
        """Rates ``nu`` and cost coefficients ``J`` at every tagged state, ``(size, k, k)`` each."""
        return self.spec.rates_batch(t, self.X), self.spec.costs_batch(t, self.X)

    def rest_rates(self, NU, U):
        return self.movers * NU[:, self.pi, self.pj] * U[self.pi, self.pj]

    def tagged_rows(self, NU, J):
        """Per-state rate row and cost row of the tagged player, ``(size, k)`` each."""
        return NU[self._rows, self.tag], J[self._rows, self.tag]

    def apply(self, p, tag_rates, rest_rates):
        """``p Q`` for the pair process."""
        inflow = np.bincount(self.tag_targets.ravel(), weights=(p[:, None] * tag_rates).ravel(),
                             minlength=self.size)
        inflow += np.bincount(self.rest_targets.ravel(), weights=(p[:, None] * rest_rates).ravel(),
                              minlength=self.size)
        return inflow - p * (tag_rates.sum(axis=1) + rest_rates.sum(axis=1))

    def differences(self, W):
        """``W(target) - W(source)`` for tagged moves and rest moves."""
        return W[self.tag_targets] - W[:, None], W[self.rest_targets] - W[:, None]


def _tagged_stage(gen, t, common, tagged):
    NU, J = gen.coefficients(t)
    nu_row, J_row = gen.tagged_rows(NU, J)
    u = np.asarray(tagged(t), dtype=float)[gen.tag]
    tag_rates = nu_row * u
    payoff = (J_row * u).sum(axis=1) - (u * u).sum(axis=1)
    return tag_rates, gen.rest_rates(NU, np.asarray(common(t), dtype=float)), payoff


def tagged_value(spec, common_policy, tagged_policy, N, j0, n_rest0, t0=0.0, T=None, dt=None,
                 capacity=None):
    """Expected payoff of a tagged player using ``tagged_policy`` while the others use ``common_policy``.

    Integrates the joint law forward together with the accumulated expected
    running payoff, then adds the expected terminal payoff.
    """
    T = spec.horizon if T is None else T
    gen = TaggedGenerator(spec, N, capacity)
    p = np.zeros(gen.size)
    p[gen.index(j0, n_rest0)] = 1.0
    n = grid_steps(t0, T, dt or default_dt(spec))
    times = np.linspace(t0, T, n + 1)

    def f(s, q, stage):
        tr, rr, g = stage
        return gen.apply(q, tr, rr), q @ g

    acc = 0.0
    stage = _tagged_stage(gen, t0, common_policy, tagged_policy)
    for m in range(n):
        s, h = times[m], times[m + 1] - times[m]
        mid = _tagged_stage(gen, s + h / 2, common_policy, tagged_policy)
        end = _tagged_stage(gen, times[m + 1], common_policy, tagged_policy)
        k1, c1 = f(s, p, stage)
        k2, c2 = f(s, p + h / 2 * k1, mid)
        k3, c3 = f(s, p + h / 2 * k2, mid)
        k4, c4 = f(s, p + h * k3, end)
        p = _guard(p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), times[m + 1])
        acc += h / 6 * (c1 + 2 * c2 + 2 * c3 + c4)
        stage = end
    return float(acc + p @ spec.terminal[gen.tag])


@dataclass(eq=False)
class TaggedValues:
    """Value of every tagged state at ``t0``, from a backward solve."""

    generator: TaggedGenerator
    values: np.ndarray

    def at(self, j, rest):
        return float(self.values[self.generator.index(j, rest)])


def _backward(gen, spec, common, t0, T, dt, step):
    W = spec.terminal[gen.tag].astype(float)
    n = grid_steps(t0, T, dt or default_dt(spec))
    times = np.linspace(t0, T, n + 1)

    def coeffs(s):
        NU, J = gen.coefficients(s)
        nu_row, J_row = gen.tagged_rows(NU, J)
        return nu_row, J_row, gen.rest_rates(NU, np.asarray(common(s), dtype=float)), s

    end = coeffs(T)
    for m in range(n, 0, -1):
        h = times[m] - times[m - 1]
        mid = coeffs(times[m] - h / 2)
        start = coeffs(times[m - 1])
        g1 = step(W, end)
        g2 = step(W - h / 2 * g1, mid)
        g3 = step(W - h / 2 * g2, mid)
        g4 = step(W - h * g3, start)
        W = W - h / 6 * (g1 + 2 * g2 + 2 * g3 + g4)
        end = start
    return W


def tagged_policy_values(spec, common_policy, tagged_policy, N, t0=0.0, T=None, dt=None, capacity=None):
    """Backward Kolmogorov solve: the payoff of ``tagged_policy`` from every starting pair at once."""
    T = spec.horizon if T is None else T
    gen = TaggedGenerator(spec, N, capacity)

    def step(W, c):
        nu_row, J_row, rr, s = c
        u = np.asarray(tagged_policy(s), dtype=float)[gen.tag]
        dtag, drest = gen.differences(W)
        gain = (J_row * u).sum(axis=1) - (u * u).sum(axis=1) + (nu_row * u * dtag).sum(axis=1)
        return -(gain + (rr * drest).sum(axis=1))

    return TaggedValues(gen, _backward(gen, spec, common_policy, t0, T, dt, step))


def best_response_values(spec, common_policy, N, t0=0.0, T=None, dt=None, capacity=None):
    """Optimal payoff of a single deviator against ``common_policy``, from every starting pair.

    Dynamic programming on the pair space: the deviator observes its own
    state and the counts of the others, and maximizes the same concave
    stage payoff, so the maximizer is again the clamp of ``c / 2``.
    """
    T = spec.horizon if T is None else T
    gen = TaggedGenerator(spec, N, capacity)
    lo, hi = spec.control_set.lo, spec.control_set.hi

    def step(W, c):
        nu_row, J_row, rr, s = c
        dtag, drest = gen.differences(W)
        _, H = maximize_box(J_row + nu_row * dtag, lo, hi)
        return -(H + (rr * drest).sum(axis=1))

    return TaggedValues(gen, _backward(gen, spec, common_policy, t0, T, dt, step))
