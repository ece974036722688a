"""Game specification types, compiled evaluation, and hypothesis checks.

States are indexed ``0..k-1`` in the Python API (model files use ``1..k``).
A control *vector* has ``k`` components; component ``l`` scales jumps into
state ``l``. A *state policy* is a ``(k, k)`` array whose row ``j`` is the
control vector used by a player currently in state ``j``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import DomainError, EvaluationError, ModelError, UsageError
from .expr import Expression, Num, compile_many, parse_expression, to_text

TOL_NEG = 1e-9
TOL_MASS = 1e-9
TOL_CONTROL = 1e-9


@dataclass(frozen=True)
class RateKernel:
    """Off-diagonal jump intensities ``nu_j(t, i, x)`` keyed by ``(i, j)``.

    Missing pairs are identically zero. ``bound`` is the declared uniform
    bound used as the thinning majorant; ``None`` lets validation estimate it.
    """

    entries: Mapping[tuple, Expression]
    bound: Optional[float] = None


@dataclass(frozen=True)
class ControlSet:
    lower: tuple
    upper: tuple

    @property
    def lo(self):
        return np.asarray(self.lower, dtype=float)

    @property
    def hi(self):
        return np.asarray(self.upper, dtype=float)

    def project(self, u):
        return np.clip(u, self.lo, self.hi)

    def contains(self, u, tol=TOL_CONTROL):
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))


@dataclass(frozen=True)
class CostSpec:
    """Linear cost coefficients ``J[j, l](t, x)``; missing entries are zero.

    The running payoff is ``sum_l J[j, l] u_l - ||u||^2``; the quadratic
    penalty is structural and not stored.
    """

    coeffs: Mapping[tuple, Expression]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    k: int
    horizon: float
    rate_kernel: RateKernel
    control_set: ControlSet
    running_cost: CostSpec
    terminal_cost: tuple
    labels: Optional[tuple] = None
    _compiled: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ModelError(f"state count k must be an integer >= 2, got {self.k}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ModelError(f"horizon must be positive and finite, got {self.horizon}")
        if len(self.terminal_cost) != self.k or not all(map(math.isfinite, self.terminal_cost)):
            raise ModelError("terminal cost needs exactly k finite entries")
        if len(self.control_set.lower) != self.k or len(self.control_set.upper) != self.k:
            raise ModelError("control box needs k lower and k upper bounds")
        if self.labels is not None and len(self.labels) != self.k:
            raise ModelError("labels need exactly k names")
        for (i, j) in self.rate_kernel.entries:
            if i == j or not (0 <= i < self.k and 0 <= j < self.k):
                raise ModelError(f"rate entry {(i + 1, j + 1)} is not an off-diagonal pair")
        for (j, l) in self.running_cost.coeffs:
            if not (0 <= j < self.k and 0 <= l < self.k):
                raise ModelError(f"cost entry {(j + 1, l + 1)} out of range")
        k = self.k
        self._compiled["pairs"] = [(i, j) for i in range(k) for j in range(k) if i != j]
        self._compiled["cells"] = [(j, l) for j in range(k) for l in range(k)]
        rate_exprs = [self.rate_kernel.entries.get(p, Num(0.0)) for p in self._compiled["pairs"]]
        cost_exprs = [self.running_cost.coeffs.get(c, Num(0.0)) for c in self._compiled["cells"]]
        self._compiled["rate"] = compile_many(rate_exprs, k)
        self._compiled["rate_arr"] = compile_many(rate_exprs, k, array=True)
        self._compiled["cost"] = compile_many(cost_exprs, k)
        self._compiled["cost_arr"] = compile_many(cost_exprs, k, array=True)
        off = np.zeros((k, k), dtype=bool)
        for i, j in self._compiled["pairs"]:
            off[i, j] = True
        self._compiled["offdiag"] = off

    # compiled evaluation -------------------------------------------------

    @property
    def terminal(self):
        return np.asarray(self.terminal_cost, dtype=float)

    def raw_rates(self, t, X):
        """Unchecked rates on arrays: ``X`` has shape ``(..., k)``; returns ``(..., k, k)``."""
        X = np.asarray(X, dtype=float)
        t = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            vals = self._compiled["rate_arr"](t, *np.moveaxis(X, -1, 0))
        out = np.zeros(X.shape[:-1] + (self.k, self.k))
        shape = X.shape[:-1]
        out[..., self._compiled["offdiag"]] = np.stack(
            [np.broadcast_to(v, shape) for v in vals], axis=-1)
        return out

    def raw_costs(self, t, X):
        X = np.asarray(X, dtype=float)
        t = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            vals = self._compiled["cost_arr"](t, *np.moveaxis(X, -1, 0))
        shape = X.shape[:-1]
        return np.stack([np.broadcast_to(v, shape) for v in vals], axis=-1).reshape(
            shape + (self.k, self.k))

    def rates(self, t, x):
        """``(k, k)`` matrix of ``nu_j(t, i, x)`` with zero diagonal, clamped and checked."""
        xs = x.tolist() if isinstance(x, np.ndarray) else [float(v) for v in x]
        try:
            vals = self._compiled["rate"](float(t), *xs)
        except (OverflowError, ZeroDivisionError, ValueError) as exc:
            raise EvaluationError(f"rate evaluation failed at t={t}, x={xs}: {exc}") from None
        if not all(map(math.isfinite, vals)):
            raise EvaluationError(f"non-finite rate at t={t}, x={xs}")
        lo = min(vals)
        if lo < 0.0:
            if lo < -TOL_NEG:
                raise EvaluationError(f"negative rate {lo:.3g} at t={t}, x={xs}")
            vals = [max(v, 0.0) for v in vals]
        out = np.zeros((self.k, self.k))
        out[self._compiled["offdiag"]] = vals
        return out

    def rates_batch(self, t, X):
        """Checked rates for many points; ``t`` scalar or broadcastable to ``X[..., 0]``."""
        out = self.raw_rates(t, X)
        return _check_rates(out, t, X)

    def costs(self, t, x):
        xs = x.tolist() if isinstance(x, np.ndarray) else [float(v) for v in x]
        try:
            vals = self._compiled["cost"](float(t), *xs)
        except (OverflowError, ZeroDivisionError, ValueError) as exc:
            raise EvaluationError(f"cost evaluation failed at t={t}, x={xs}: {exc}") from None
        if not all(map(math.isfinite, vals)):
            raise EvaluationError(f"non-finite cost coefficient at t={t}, x={xs}")
        return np.array(vals, dtype=float).reshape(self.k, self.k)

    def costs_batch(self, t, X):
        out = self.raw_costs(t, X)
        if not np.all(np.isfinite(out)):
            raise EvaluationError("non-finite cost coefficient")
        return out

    def stage_payoff(self, J, u):
        """``sum_l J_l u_l - ||u||^2`` along the last axis."""
        return np.sum(J * u, axis=-1) - np.sum(u * u, axis=-1)

    def digest(self):
        from .modelfile import format_model

        return hashlib.sha256(format_model(self).encode()).hexdigest()[:16]


def _check_rates(out, t, x):
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"non-finite rate at t={t}")
    if out.min(initial=0.0) < 0.0:
        if out.min() < -TOL_NEG:
            raise EvaluationError(f"negative rate {out.min():.3g} at t={t}")
        out = np.maximum(out, 0.0)
    return out


def make_model(k, horizon, rates, lower, upper, cost=None, terminal=None,
               bound=None, labels=None):
    """Build a :class:`ModelSpec` from expression strings or numbers.

    ``rates`` maps 0-based ``(i, j)`` to an expression; ``cost`` is either a
    mapping ``(j, l) -> expr`` or a ``k x k`` nested sequence.
    """
    def ex(v):
        return v if not isinstance(v, (str, int, float)) else parse_expression(str(v), k)

    cost = cost or {}
    if not isinstance(cost, Mapping):
        cost = {(j, l): cost[j][l] for j in range(k) for l in range(k)}
    return ModelSpec(
        k=k,
        horizon=float(horizon),
        rate_kernel=RateKernel({p: ex(v) for p, v in rates.items()}, bound),
        control_set=ControlSet(tuple(map(float, lower)), tuple(map(float, upper))),
        running_cost=CostSpec({c: ex(v) for c, v in cost.items()}),
        terminal_cost=tuple(map(float, terminal if terminal is not None else [0.0] * k)),
        labels=tuple(labels) if labels else None,
    )


def simplex_vector(x, k=None, tol=TOL_MASS):
    """Return ``x`` as a float array after checking it lies on the simplex."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or (k is not None and x.shape[0] != k):
        raise DomainError(f"expected a vector of length {k}, got shape {x.shape}")
    if np.any(x < -TOL_NEG) or abs(x.sum() - 1.0) > tol:
        raise DomainError(f"{x.tolist()} is not a probability vector")
    return x


def eval_rate(spec, t, i, j, x):
    """Jump intensity ``nu_j(t, i, x)`` for ``i != j``."""
    if i == j:
        raise UsageError("the diagonal rate is derived from the row sum, never evaluated")
    x = simplex_vector(x, spec.k)
    return float(spec.rates(t, x)[i, j])


def eval_running_cost(spec, t, j, x, u):
    """Running payoff ``sum_l J[j, l](t, x) u_l - ||u||^2``."""
    u = np.asarray(u, dtype=float)
    if not spec.control_set.contains(u):
        raise DomainError(f"control {u.tolist()} lies outside U")
    J = spec.costs(t, simplex_vector(x, spec.k))[j]
    return float(J @ u - u @ u)


# ---------------------------------------------------------------- validation

@dataclass
class Violation:
    kind: str  # nonfinite | negative | unbounded | structure
    entry: str
    value: float
    t: Optional[float] = None
    x: Optional[tuple] = None

    def __str__(self):
        where = "" if self.t is None else f" at t={self.t:g}, x={list(self.x)}"
        return f"{self.kind}: {self.entry} = {self.value:.6g}{where}"


@dataclass
class ValidationReport:
    violations: list
    rate_max: float
    rate_bound: float
    rate_lipschitz: float
    cost_lipschitz: float
    grid_points: int
    notes: list

    @property
    def accepted(self):
        return not self.violations

    def to_dict(self):
        return {
            "accepted": self.accepted,
            "violations": [str(v) for v in self.violations],
            "rate_max": self.rate_max,
            "rate_bound": self.rate_bound,
            "rate_lipschitz": self.rate_lipschitz,
            "cost_lipschitz": self.cost_lipschitz,
            "grid_points": self.grid_points,
            "notes": self.notes,
        }


def simplex_lattice(k, m):
    """All points ``n / m`` with ``n`` a composition of ``m`` into ``k`` parts."""
    pts = [c for c in itertools.product(range(m + 1), repeat=k - 1) if sum(c) <= m]
    arr = np.array([(*c, m - sum(c)) for c in pts], dtype=float)
    return arr / m


def _worst(kind, values, mask, entries, times, X, pick_max):
    out = []
    for e, name in enumerate(entries):
        m = mask[..., e]
        if not m.any():
            continue
        v = np.where(m, values[..., e], -np.inf if pick_max else np.inf)
        flat = int(np.argmax(v) if pick_max else np.argmin(v))
        it, ix = np.unravel_index(flat, v.shape)
        val = values[it, ix, e]
        out.append(Violation(kind, name, float(val), float(times[it]), tuple(X[ix].tolist())))
    return out


def _lipschitz(raw, t, X, h=1e-6):
    k = X.shape[-1]
    grads = []
    for l in range(k):
        e = np.zeros(k)
        e[l] = h
        with np.errstate(all="ignore"):
            grads.append((raw(t, X + e) - raw(t, X - e)) / (2 * h))
    g = np.sqrt(sum(gi ** 2 for gi in grads))
    g = g[np.isfinite(g)]
    return float(g.max()) if g.size else float("nan")


def validate_model(spec, grid_points=20):
    """Check boundedness, nonnegativity and finiteness on a sampling grid.

    The grid is the simplex lattice with ``grid_points`` subdivisions
    (vertices included) crossed with ``t in {0, T/4, T/2, 3T/4, T}``. This is
    a sampling check at grid resolution, not a proof. Lipschitz constants of
    rates and costs in ``x`` are estimated as the largest Euclidean norm of a
    central-difference gradient over the grid.
    """
    k, T = spec.k, spec.horizon
    violations = []
    lo, hi = spec.control_set.lo, spec.control_set.hi
    for l in range(k):
        if lo[l] > hi[l]:
            violations.append(Violation("structure", f"U[{l + 1}] lower > upper", float(lo[l] - hi[l])))
        if lo[l] < 0:
            violations.append(Violation("structure", f"U[{l + 1}] lower bound < 0 (rates would turn negative)", float(lo[l])))
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        violations.append(Violation("unbounded", "control box", float("inf")))

    times = np.array([0.0, T / 4, T / 2, 3 * T / 4, T])
    X = simplex_lattice(k, grid_points)
    tt = times[:, None]
    Xb = np.broadcast_to(X, (len(times),) + X.shape)
    pairs = spec._compiled["pairs"]
    rate_names = [f"nu[{i + 1}->{j + 1}]" for i, j in pairs]
    cost_names = [f"J[{j + 1},{l + 1}]" for j, l in spec._compiled["cells"]]

    R = spec.raw_rates(tt, Xb)[..., spec._compiled["offdiag"]]
    C = spec.raw_costs(tt, Xb).reshape(len(times), len(X), k * k)
    fin_r, fin_c = np.isfinite(R), np.isfinite(C)
    violations += _worst("nonfinite", np.where(fin_r, 0.0, 1.0), ~fin_r, rate_names, times, X, True)
    violations += _worst("nonfinite", np.where(fin_c, 0.0, 1.0), ~fin_c, cost_names, times, X, True)
    Rf, Cf = np.where(fin_r, R, 0.0), np.where(fin_c, C, 0.0)
    violations += _worst("negative", Rf, Rf < -TOL_NEG, rate_names, times, X, False)
    violations += _worst("negative", Cf, Cf < -TOL_NEG, cost_names, times, X, False)

    rate_max = float(Rf.max(initial=0.0))
    notes = [
        "hypotheses checked at grid resolution (sampling check, not a proof)",
        "diagonal control component enters the payoff only; the generator diagonal is minus the row sum",
    ]
    if spec.rate_kernel.bound is not None:
        bound = float(spec.rate_kernel.bound)
        violations += _worst("unbounded", Rf, Rf > bound * (1 + 1e-12), rate_names, times, X, True)
    else:
        bound = rate_max
        notes.append("no declared rate bound; grid maximum used as majorant")

    def rflat(t, Y):
        return spec.raw_rates(t, Y)[..., spec._compiled["offdiag"]]

    def cflat(t, Y):
        return spec.raw_costs(t, Y).reshape(Y.shape[:-1] + (k * k,))

    report = ValidationReport(
        violations=violations,
        rate_max=rate_max,
        rate_bound=bound,
        rate_lipschitz=_lipschitz(rflat, tt, Xb),
        cost_lipschitz=_lipschitz(cflat, tt, Xb),
        grid_points=grid_points,
        notes=notes,
    )
    return report


def majorant(spec):
    """Uniform bound on a single rate ``nu``: declared bound, else grid estimate."""
    if spec.rate_kernel.bound is not None:
        return float(spec.rate_kernel.bound)
    if "majorant" not in spec._compiled:
        spec._compiled["majorant"] = validate_model(spec, 20).rate_max
    return spec._compiled["majorant"]


def describe(spec):
    """Short human-readable summary of the model (used by the CLI)."""
    lines = [f"k={spec.k} T={spec.horizon:g}"]
    for (i, j), e in sorted(spec.rate_kernel.entries.items()):
        lines.append(f"  nu[{i + 1}->{j + 1}] = {to_text(e)}")
    return "\n".join(lines)
