"""Controlled Q-matrices and the linear (time-inhomogeneous) propagator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrationInstabilityError

ROW_SUM_TOL = 1e-10
DRIFT_TOL = 1e-8
NEG_TOL = 1e-8


@dataclass(frozen=True)
class QMatrix:
    q: np.ndarray
    t: float


def grid_steps(t0, t1, dt):
    """Number of uniform steps covering ``[t0, t1]`` with step at most ``dt``."""
    if t1 < t0:
        raise DomainError(f"need t0 <= t1, got {t0} > {t1}")
    if t1 == t0:
        return 0
    return max(1, math.ceil((t1 - t0) / dt - 1e-9))


def default_dt(spec):
    return spec.horizon / 2000


def q_from_rates(nu, U):
    """Generator with off-diagonals ``nu[i, j] * U[i, j]`` and diagonal minus the row sum."""
    q = nu * U
    np.fill_diagonal(q, 0.0)
    q[np.diag_indices_from(q)] = -q.sum(axis=1)
    return q


def q_matrix(spec, t, x, U):
    """Fast unchecked-policy variant of :func:`build_q_matrix` returning an array."""
    return q_from_rates(spec.rates(t, x), U)


def build_q_matrix(spec, t, x, policy):
    """Assemble ``q[i, j] = nu_j(t, i, x) * u(i)_j`` for ``i != j``; rows sum to zero.

    ``policy`` is a ``(k, k)`` state policy: row ``i`` is the control of the
    player currently in state ``i``.
    """
    U = np.asarray(policy, dtype=float)
    if U.shape != (spec.k, spec.k):
        raise DomainError(f"state policy must have shape {(spec.k, spec.k)}")
    for i in range(spec.k):
        if not spec.control_set.contains(U[i]):
            raise DomainError(f"control of state {i} lies outside U: {U[i].tolist()}")
    return QMatrix(q_matrix(spec, t, x, U), float(t))


def propagate(spec, policy_curve, x_curve, t0, t1, p0, dt=None):
    """Integrate ``dp/ds = p Q(s)`` from ``t0`` to ``t1`` (classical RK4, fixed step).

    ``p0`` is a probability row vector or a row-stochastic matrix.
    ``x_curve(s)`` supplies the mean-field state fed to the rates and
    ``policy_curve(s)`` the state policy. Rows are renormalized after each
    step; the pre-renormalization drift is checked against ``1e-8``.
    """
    dt = dt or default_dt(spec)
    p = np.array(p0, dtype=float)
    rows = np.atleast_2d(p)
    if np.any(rows < -1e-9) or np.any(np.abs(rows.sum(axis=1) - 1) > 1e-9):
        raise DomainError("p0 must be row-stochastic")
    n = grid_steps(t0, t1, dt)
    if n == 0:
        return p
    h = (t1 - t0) / n

    def Q(s):
        return q_matrix(spec, s, x_curve(s), np.asarray(policy_curve(s)))

    for m in range(n):
        s = t0 + m * h
        k1 = p @ Q(s)
        Qmid = Q(s + h / 2)
        k2 = (p + h / 2 * k1) @ Qmid
        k3 = (p + h / 2 * k2) @ Qmid
        k4 = (p + h * k3) @ Q(s + h)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if p.min() < -NEG_TOL:
            raise IntegrationInstabilityError(
                f"probability {p.min():.3g} at t={s + h:g}; try a smaller dt")
        total = p.sum(axis=-1, keepdims=True)
        if np.any(np.abs(total - 1) > DRIFT_TOL):
            raise IntegrationInstabilityError(f"mass drift {np.abs(total - 1).max():.3g} at t={s + h:g}")
        p = np.maximum(p, 0.0)
        p = p / p.sum(axis=-1, keepdims=True)
    return p
