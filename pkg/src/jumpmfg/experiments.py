"""Headline experiments: O(1/N) bias of the N-player law, epsilon-Nash gaps, Taylor remainder.

Every experiment returns an :class:`ExperimentResult`: a table sorted by
``N``, a least-squares fit of ``log metric`` against ``log N`` with a 95%
t-band, and an echo of the configuration. The CSV carries only quantities
that are pure functions of the configuration; wall time goes to the JSON
sidecar so that equal seeds give equal CSV bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import UsageError
from .generator import default_dt
from .kinetic import Observable, koopman_generator, solve_kinetic
from .mfg import Equilibrium
from .model import simplex_vector
from .nplayer import (best_response_values, exact_marginal_law, nearest_counts,
                      simulate_endpoints, tagged_policy_values)

METRIC_FLOOR = 1e-10
BEST_RESPONSE = "best_response"


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    half_width: float
    points: int

    @property
    def band(self):
        return (self.slope - self.half_width, self.slope + self.half_width)


def fit_loglog(Ns, metrics, floor=METRIC_FLOOR):
    """Least-squares slope of ``log metric`` on ``log N``; None when fewer than two metrics exceed ``floor``."""
    Ns = np.asarray(Ns, dtype=float)
    m = np.asarray(metrics, dtype=float)
    keep = m > floor
    if keep.sum() < 2:
        return None
    x, y = np.log(Ns[keep]), np.log(m[keep])
    fit = stats.linregress(x, y)
    dof = len(x) - 2
    half = float(stats.t.ppf(0.975, dof) * fit.stderr) if dof > 0 else math.inf
    return SlopeFit(float(fit.slope), float(fit.intercept), half, int(keep.sum()))


@dataclass
class ExperimentResult:
    name: str
    columns: list
    rows: list
    config: dict = field(default_factory=dict)
    fit: SlopeFit | None = None
    wall_time: float = 0.0
    notes: list = field(default_factory=list)

    def column(self, key):
        return [r[key] for r in self.rows]

    @property
    def slope(self):
        return None if self.fit is None else self.fit.slope

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def summary(self):
        if self.fit is None:
            return f"{self.name}: slope undefined"
        lo, hi = self.fit.band
        return f"{self.name}: slope {self.fit.slope:.4f} (95% band [{lo:.4f}, {hi:.4f}])"

    def to_dict(self):
        fit = None
        if self.fit is not None:
            fit = {"slope": self.fit.slope, "intercept": self.fit.intercept,
                   "band_95": list(self.fit.band), "points": self.fit.points}
        return {"name": self.name, "columns": self.columns, "rows": self.rows, "fit": fit,
                "config": self.config, "notes": self.notes, "wall_time_s": self.wall_time}

    def write(self, directory, stem=None):
        """Write ``<stem>.csv`` and the ``<stem>.json`` sidecar; returns both paths."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        csv_path, json_path = d / f"{stem}.csv", d / f"{stem}.json"
        csv_path.write_bytes(self.to_csv().encode("utf-8"))
        json_path.write_text(json.dumps(self.to_dict(), indent=2, default=_jsonable) + "\n")
        return csv_path, json_path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _check_N(N_list):
    Ns = [int(n) for n in N_list]
    if not Ns or any(n < 1 for n in Ns) or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise UsageError(f"N list must be positive and strictly increasing, got {N_list}")
    return Ns


def weak_norm_dictionary(k):
    """Test observables standing in for the weak norm: coordinates and pairwise products."""
    obs = [Observable.coordinate(i, k) for i in range(k)]
    obs += [Observable.product(i, j, k) for i in range(k) for j in range(i, k)]
    return obs


def _resolve_policy(source):
    if isinstance(source, Equilibrium):
        return source.policy, source.flow.states[0]
    return source, None


def run_convergence_experiment(spec, source, F, N_list, mode="exact", replications=10_000, seed=0,
                               dt=None, x0=None):
    """Distance ``|E F(n_T / N) - F(x_T)|`` between the N-player and kinetic endpoints.

    ``source`` is a state policy or an :class:`Equilibrium` (whose policy
    and initial law are used). The N-player system starts from the
    largest-remainder rounding of ``N x0``; the kinetic solve starts from
    ``x0`` itself. The ``weak`` column is the largest deviation over
    :func:`weak_norm_dictionary`.
    """
    start = time.perf_counter()
    if mode not in ("exact", "mc"):
        raise UsageError(f"mode must be 'exact' or 'mc', got {mode!r}")
    Ns = _check_N(N_list)
    policy, eq_x0 = _resolve_policy(source)
    x0 = simplex_vector(eq_x0 if x0 is None else x0, spec.k)
    dt = dt or (source.dt if isinstance(source, Equilibrium) else default_dt(spec))
    xT = solve_kinetic(spec, policy, x0, 0.0, spec.horizon, dt).final
    target = F(xT)
    dictionary = weak_norm_dictionary(spec.k)
    ref = np.array([G(xT) for G in dictionary])
    rows, coupling = [], 0.0
    for N in Ns:
        n0 = nearest_counts(x0, N)
        coupling = max(coupling, N * float(np.abs(n0.empirical - x0).sum()))
        if mode == "exact":
            law = exact_marginal_law(spec, policy, N, n0, 0.0, spec.horizon, dt)
            mean = law.expect(F)
            se = None
            weak = max(abs(law.expect(G) - r) for G, r in zip(dictionary, ref))
        else:
            ends = simulate_endpoints(spec, policy, N, n0, 0.0, spec.horizon, replications,
                                      seed=seed + N)
            X = ends / N
            vals = np.array([F(x) for x in X])
            mean = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
            weak = max(abs(float(np.mean([G(x) for x in X])) - r) for G, r in zip(dictionary, ref))
        rows.append({"N": N, "metric": float(abs(mean - target)), "stderr": se, "mean": mean,
                     "weak": float(weak)})
    fit = fit_loglog(Ns, [r["metric"] for r in rows])
    notes = [] if fit else ["metric below floor for all but at most one N; slope undefined"]
    config = {"model_digest": spec.digest(), "observable": F.name, "mode": mode, "N": Ns,
              "replications": replications if mode == "mc" else None,
              "seeds": [seed + N for N in Ns] if mode == "mc" else None, "dt": dt,
              "x0": x0.tolist(), "kinetic_endpoint": xT.tolist(), "F_kinetic": target,
              "initial_coupling_k1": coupling,
              "weak_norm_dictionary": [G.name for G in dictionary]}
    return ExperimentResult("convergence", ["N", "metric", "stderr", "mean", "weak"], rows, config,
                            fit, time.perf_counter() - start, notes)


def _policy_name(p):
    return p if isinstance(p, str) else getattr(p, "name", type(p).__name__)


def run_nash_gap_experiment(spec, equilibrium, deviation_library, N_list, dt=None, x0=None):
    """Largest gain of a unilateral deviation from the equilibrium policy, for each N.

    Library entries are state policies or the string ``"best_response"``,
    which stands for the optimal deviation computed by dynamic programming
    on the tagged-pair space. The equilibrium policy is always included, so
    every gap is nonnegative. The gap is maximized over the starting states
    of players present in the initial configuration.
    """
    start = time.perf_counter()
    Ns = _check_N(N_list)
    gamma = equilibrium.policy
    library = list(deviation_library)
    if not any(p is gamma for p in library):
        library.append(gamma)
    dt = dt or equilibrium.dt
    x0 = simplex_vector(equilibrium.flow.states[0] if x0 is None else x0, spec.k)
    rows = []
    for N in Ns:
        n0 = np.asarray(nearest_counts(x0, N).n)
        starts = [(j, tuple((n0 - np.eye(spec.k, dtype=int)[j]).tolist()))
                  for j in range(spec.k) if n0[j] > 0]
        base = tagged_policy_values(spec, gamma, gamma, N, dt=dt)
        gap, arg = -math.inf, None
        for dev in library:
            if isinstance(dev, str):
                if dev != BEST_RESPONSE:
                    raise UsageError(f"unknown deviation {dev!r}")
                vals = best_response_values(spec, gamma, N, dt=dt)
            elif dev is gamma:
                vals = base
            else:
                vals = tagged_policy_values(spec, gamma, dev, N, dt=dt)
            g = max(vals.at(j, r) - base.at(j, r) for j, r in starts)
            if g > gap:
                gap, arg = g, _policy_name(dev)
        rows.append({"N": N, "gap": float(max(gap, 0.0)), "raw_gap": float(gap), "argmax": arg})
    fit = fit_loglog(Ns, [r["gap"] for r in rows])
    notes = [] if fit else ["gap below floor for all but at most one N; slope undefined"]
    config = {"model_digest": spec.digest(), "N": Ns, "dt": dt, "x0": x0.tolist(),
              "library": [_policy_name(p) for p in library],
              "equilibrium_residual": equilibrium.residual, "equilibrium_tol": equilibrium.tol}
    return ExperimentResult("nash_gap", ["N", "gap", "raw_gap", "argmax"], rows, config, fit,
                            time.perf_counter() - start, notes)


def jump_generator_apply(F, spec, t, n, N, U):
    """``sum_{i != j} n_i nu_j(t, i, n / N) U[i, j] (F(x + (e_j - e_i) / N) - F(x))``."""
    k = spec.k
    n = np.asarray(n, dtype=float)
    x = n / N
    nu = spec.rates(t, x)
    base = F(x)
    total = 0.0
    for i in range(k):
        if n[i] == 0:
            continue
        for j in range(k):
            if i == j:
                continue
            y = x.copy()
            y[i] -= 1.0 / N
            y[j] += 1.0 / N
            total += n[i] * nu[i, j] * U[i, j] * (F(y) - base)
    return total


def run_taylor_check(spec, F, N_list, sample_states, policy=None, t=0.0):
    """Largest gap between the N-player jump generator and its first-order part on sampled states.

    Each sample is replaced by its nearest composition ``n / N``. The
    default state policy is the upper corner of the control box.
    """
    start = time.perf_counter()
    Ns = _check_N(N_list)
    U = np.tile(spec.control_set.hi, (spec.k, 1)) if policy is None else np.asarray(policy(t))
    samples = [simplex_vector(x, spec.k) for x in sample_states]
    rows = []
    for N in Ns:
        worst = 0.0
        for x in samples:
            n = np.asarray(nearest_counts(x, N).n)
            xN = n / N
            d = abs(jump_generator_apply(F, spec, t, n, N, U) - koopman_generator(F, spec, t, xN, U))
            worst = max(worst, d)
        rows.append({"N": N, "metric": float(worst)})
    fit = fit_loglog(Ns, [r["metric"] for r in rows])
    notes = [] if fit else ["remainder below floor for all but at most one N; slope undefined"]
    config = {"model_digest": spec.digest(), "observable": F.name, "N": Ns, "t": t,
              "samples": [x.tolist() for x in samples], "policy": U.tolist()}
    return ExperimentResult("taylor", ["N", "metric"], rows, config, fit,
                            time.perf_counter() - start, notes)
