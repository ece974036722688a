"""MFG consistency fixed point by damped Picard iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .generator import default_dt, grid_steps
from .hjb import solve_hjb
from .kinetic import Flow, solve_kinetic
from .model import simplex_vector

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Equilibrium:
    """Result of :func:`solve_mfg`.

    ``flow`` is the kinetic solution generated by ``policy`` from ``x0``;
    ``policy`` is the HJB feedback law computed against the last iterate.
    ``converged`` is False when ``max_iter`` ran out; the history is kept
    either way.
    """

    flow: Flow
    value: object
    policy: object
    residual_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    tol: float = 0.0
    damping: float = 1.0
    dt: float = 0.0

    @property
    def residual(self):
        return self.residual_history[-1] if self.residual_history else float("inf")


def solve_mfg(spec, x0, tol=1e-8, max_iter=200, damping=0.5, dt=None, initial_flow=None):
    """Alternate backward HJB and forward kinetic solves until the flow reproduces itself.

    Iterate ``x[n+1] = (1 - damping) x[n] + damping K(BR(x[n]))`` on a fixed
    grid, where ``BR`` is the HJB feedback law and ``K`` the kinetic solve
    from ``x0``. The residual is ``sup_t |x[n+1](t) - x[n](t)|_1``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    x0 = simplex_vector(x0, spec.k)
    dt = dt or default_dt(spec)
    T = spec.horizon
    n = grid_steps(0.0, T, dt)
    h = T / n
    times = h * np.arange(n + 1)
    times[-1] = T
    current = initial_flow if initial_flow is not None else Flow.constant(x0, times)
    history = []
    for it in range(1, max_iter + 1):
        value, policy = solve_hjb(spec, current)
        generated = solve_kinetic(spec, policy, x0, 0.0, T, h, policy_id=f"hjb-iter{it}")
        nxt = current.mix(generated, damping)
        residual = nxt.distance(current, ord=1)
        history.append(residual)
        log.debug("mfg iteration %d residual %.3e", it, residual)
        if residual <= tol:
            return Equilibrium(generated, value, policy, history, it, True, tol, damping, h)
        current = nxt
    return Equilibrium(generated, value, policy, history, max_iter, False, tol, damping, h)


def consistency_residual(spec, eq):
    """Re-solve the kinetic equation under ``eq.policy``; sup-l1 distance to ``eq.flow``."""
    flow = eq.flow
    h = (flow.t1 - flow.t0) / (len(flow.times) - 1)
    replay = solve_kinetic(spec, eq.policy, flow.states[0], flow.t0, flow.t1, h)
    return replay.distance(flow, ord=1)
