"""Backward HJB system for a fixed mean-field curve and the feedback law.

For a player in state ``j`` the Hamiltonian is

    H(t, j, V, x) = max_{u in U} sum_l c_l u_l - ||u||^2,
    c_l = J[j, l](t, x) + nu_l(t, j, x) (V_l - V_j)   (l != j),   c_j = J[j, j](t, x),

whose unique maximizer over the box is ``clip(c / 2, lower, upper)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, DomainError
from .generator import default_dt, grid_steps
from .kinetic import Flow
from .model import simplex_vector
from .policy import PolicyGrid


@dataclass(eq=False)
class ValueGrid:
    times: np.ndarray
    values: np.ndarray
    derivs: np.ndarray

    def at(self, t):
        return Flow(self.times, self.values, self.derivs).at(t)


def hamiltonian_coefficients(J, nu, V):
    """Row ``j`` of the result is ``c`` for a player in state ``j``.

    ``J`` and ``nu`` are ``(..., k, k)``; ``V`` is ``(..., k)``. The zero
    diagonal of ``nu`` makes ``c_j = J[j, j]`` automatically.
    """
    return J + nu * (V[..., None, :] - V[..., :, None])


def maximize_box(c, lower, upper):
    """Maximizer and maximum of ``c.u - ||u||^2`` over a box, along the last axis."""
    u = np.clip(c / 2, lower, upper)
    return u, np.sum(c * u, axis=-1) - np.sum(u * u, axis=-1)


def maximize_hamiltonian(spec, t, j, x, V_row):
    """Optimal control vector and Hamiltonian value for a player in state ``j``."""
    x = simplex_vector(x, spec.k)
    V = np.asarray(V_row, dtype=float)
    c = hamiltonian_coefficients(spec.costs(t, x), spec.rates(t, x), V)[j]
    u, H = maximize_box(c, spec.control_set.lo, spec.control_set.hi)
    return u, float(H)


def solve_hjb(spec, x_curve, dt=None):
    """Integrate ``dV/dt = -H(t, j, V, x_t)`` backward from ``V(T) = V^T``.

    Uses the grid of ``x_curve`` (a :class:`~jumpmfg.kinetic.Flow` ending at
    the horizon) unless ``dt`` asks for a different one. Returns the value
    grid and a :class:`PolicyGrid` on the half-step grid: nodes and
    midpoints, so an RK4 forward pass with the same step reads stored
    controls only. Midpoint controls use the Hermite interpolants of ``V``
    and ``x``.
    """
    T = spec.horizon
    if abs(x_curve.t1 - T) > 1e-12 * max(1.0, T):
        raise DomainError(f"mean-field curve must end at the horizon T={T}")
    t0 = x_curve.t0
    if dt is None:
        times = x_curve.times
    else:
        n = grid_steps(t0, T, dt)
        times = t0 + (T - t0) / n * np.arange(n + 1)
        times[-1] = T
    n = len(times) - 1
    lo, hi = spec.control_set.lo, spec.control_set.hi
    k = spec.k
    half = np.empty(2 * n + 1)
    half[0::2] = times
    half[1::2] = (times[:-1] + times[1:]) / 2
    # rates and costs depend on (t, x_t) only, so evaluate them once for every stage time
    X = x_curve.at_many(half)
    NU = spec.rates_batch(half, X)
    JC = spec.costs_batch(half, X)
    values = np.empty((n + 1, k))
    derivs = np.empty((n + 1, k))
    controls = np.empty((2 * n + 1, k, k))

    def g(a, V):
        c = JC[a] + NU[a] * (V[None, :] - V[:, None])
        u = np.minimum(np.maximum(c / 2, lo), hi)
        return (u * u).sum(axis=1) - (c * u).sum(axis=1), u

    V = spec.terminal.copy()
    values[n] = V
    g1, u1 = g(2 * n, V)
    for m in range(n, 0, -1):
        h = times[m] - times[m - 1]
        derivs[m] = g1
        controls[2 * m] = u1
        g2, _ = g(2 * m - 1, V - h / 2 * g1)
        g3, _ = g(2 * m - 1, V - h / 2 * g2)
        g4, _ = g(2 * m - 2, V - h * g3)
        V = V - h / 6 * (g1 + 2 * g2 + 2 * g3 + g4)
        if not np.all(np.isfinite(V)):
            raise BlowUpError(f"value function blew up at t={times[m - 1]:g}")
        values[m - 1] = V
        g1, u1 = g(2 * m - 2, V)
    derivs[0] = g1
    controls[0] = u1
    h = np.diff(times)[:, None]
    Vmid = (values[:-1] + values[1:]) / 2 + h / 8 * (derivs[:-1] - derivs[1:])
    cmid = hamiltonian_coefficients(JC[1::2], NU[1::2], Vmid)
    controls[1::2], _ = maximize_box(cmid, lo, hi)
    policy = PolicyGrid(half, controls, lo, hi, name="hjb")
    return ValueGrid(np.array(times), values, derivs), policy
