import numpy as np
import pytest

from jumpmfg.kinetic import solve_kinetic
from jumpmfg.mfg import Equilibrium, consistency_residual, solve_mfg
from jumpmfg.policy import ConstantPolicy

from conftest import constant_model, imitation_model


def test_zero_cost_converges_to_zero_policy():
    eq = solve_mfg(constant_model(), [0.3, 0.7])
    assert eq.converged and eq.iterations <= 2
    assert not np.any(eq.policy.controls)
    assert np.all(eq.flow.states == np.array([0.3, 0.7]))
    assert eq.residual == 0.0
    assert consistency_residual(constant_model(), eq) == 0.0


def test_symmetric_model_stays_at_the_centre():
    spec = constant_model(J=[[1, 2], [2, 1]], terminal=(0.5, 0.5))
    eq = solve_mfg(spec, [0.5, 0.5])
    assert eq.converged
    assert np.abs(eq.flow.states - 0.5).max() <= eq.tol
    C = eq.policy.controls
    assert np.abs(C[:, 0, ::-1] - C[:, 1]).max() <= 1e-12


def test_imitation_equilibrium_replays():
    spec = imitation_model(J=[[1, 0], [0, 1]])
    eq = solve_mfg(spec, [0.5, 0.5], tol=1e-8, damping=0.5)
    assert eq.converged
    assert consistency_residual(spec, eq) <= eq.tol


def test_residual_history_decreases(corpus):
    spec = corpus["crowd"]
    eq = solve_mfg(spec, [0.75, 0.25], dt=1 / 400)
    assert eq.converged
    h = np.array(eq.residual_history)
    assert np.all(h[1:] < h[:-1])
    assert consistency_residual(spec, eq) <= 2 * eq.tol


def test_non_convergence_is_a_result(corpus):
    eq = solve_mfg(corpus["crowd"], [0.75, 0.25], max_iter=3, dt=1 / 200)
    assert isinstance(eq, Equilibrium) and not eq.converged
    assert len(eq.residual_history) == 3 and eq.residual > eq.tol


def test_damping_invariance(corpus):
    spec = corpus["crowd"]
    a = solve_mfg(spec, [0.75, 0.25], tol=1e-10, damping=0.5, dt=1 / 400)
    b = solve_mfg(spec, [0.75, 0.25], tol=1e-10, damping=1.0, dt=1 / 400)
    assert a.converged and b.converged
    assert a.flow.distance(b.flow, ord=np.inf) <= 10 * 1e-10


def _refinement_changes(spec, x0, ns):
    finals = [solve_mfg(spec, x0, tol=1e-13, dt=1 / n).flow.final for n in ns]
    return [np.abs(b - a).max() for a, b in zip(finals, finals[1:])]


def test_grid_refinement_order(corpus):
    changes = _refinement_changes(corpus["crowd"], [0.75, 0.25], (10, 20, 40, 80))
    orders = np.log2([a / b for a, b in zip(changes, changes[1:])])
    assert np.all(orders >= 3), orders


def test_grid_refinement_with_switching_controls(corpus):
    # clipped controls switch on and off between nodes, so only monotone refinement is guaranteed
    changes = _refinement_changes(corpus["cycle3"], [0.5, 0.3, 0.2], (10, 20, 40, 80))
    assert all(b < a for a, b in zip(changes, changes[1:]))


def test_inconsistent_pair_is_detected(corpus):
    spec = corpus["crowd"]
    eq = solve_mfg(spec, [0.75, 0.25], dt=1 / 200)
    other = solve_kinetic(spec, ConstantPolicy(np.full((2, 2), 2.0)), [0.75, 0.25], dt=1 / 200)
    forged = Equilibrium(other, eq.value, eq.policy, eq.residual_history, eq.iterations, True, eq.tol)
    assert consistency_residual(spec, forged) > 1e-3


def test_argument_checks():
    with pytest.raises(ValueError):
        solve_mfg(constant_model(), [0.5, 0.5], damping=0.0)
    with pytest.raises(ValueError):
        solve_mfg(constant_model(), [0.5, 0.5], tol=0.0)
