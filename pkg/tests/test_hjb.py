import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpmfg.errors import DomainError
from jumpmfg.hjb import maximize_box, maximize_hamiltonian, solve_hjb
from jumpmfg.kinetic import Flow, solve_kinetic
from jumpmfg.model import make_model
from jumpmfg.policy import ConstantPolicy, PolicyGrid, policy_at

from conftest import constant_model, imitation_model

GRID = np.linspace(0, 1, 2001)
HALF = Flow.constant([0.5, 0.5], GRID)


def grid_search(c, lo, hi, m=200):
    """Brute-force maximizer of c.u - |u|^2 over an m-per-axis lattice of the box."""
    axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(c))
    vals = U @ c - (U * U).sum(axis=1)
    best = int(np.argmax(vals))
    pitch = max((b - a) / (m - 1) for a, b in zip(lo, hi))
    return U[best], vals[best], pitch


def discrete_dp_value(J, nu, V_T, lo, hi, T=1.0, steps=2000, m=21):
    """Backward DP on a time lattice with exhaustive search over an m-per-axis control lattice."""
    k = len(V_T)
    h = T / steps
    axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    V = np.array(V_T, dtype=float)
    for _ in range(steps):
        new = np.empty(k)
        for j in range(k):
            drift = sum(U[:, l] * nu[j][l] * (V[l] - V[j]) for l in range(k) if l != j)
            new[j] = np.max(h * (U @ np.asarray(J[j]) - (U * U).sum(axis=1)) + V[j] + h * drift)
        V = new
    return V


def test_maximizer_examples():
    spec = constant_model(J={(0, 0): 2, (0, 1): 4})
    u, H = maximize_hamiltonian(spec, 0.0, 0, [0.5, 0.5], [0.0, 0.0])
    assert u.tolist() == [1.0, 1.0] and H == pytest.approx(4.0)
    spec = constant_model(J={(0, 0): 0.5})
    u, H = maximize_hamiltonian(spec, 0.0, 0, [0.5, 0.5], [3.0, 0.0])
    assert u.tolist() == [0.25, 0.0] and H == pytest.approx(0.0625)
    u, H = maximize_hamiltonian(constant_model(), 0.0, 1, [0.5, 0.5], [2.0, 2.0])
    assert u.tolist() == [0.0, 0.0] and H == 0.0


@pytest.mark.parametrize("c", [(2.0, 4.0), (0.5, -3.0)])
def test_maximizer_examples_agree_with_grid_search(c):
    u, H = maximize_box(np.array(c), np.zeros(2), np.ones(2))
    ug, Hg, pitch = grid_search(np.array(c), [0, 0], [1, 1])
    assert np.abs(u - ug).max() <= 1e-2 and abs(H - Hg) <= 1e-3


@given(st.integers(2, 3), st.data())
@settings(max_examples=100, deadline=None)
def test_maximizer_dominates_grid_search(k, data):
    vec = lambda a, b: np.array(data.draw(st.lists(st.floats(a, b), min_size=k, max_size=k)))
    c, lo = vec(-6, 6), vec(0, 2)
    hi = lo + vec(0.05, 2)
    u, H = maximize_box(c, lo, hi)
    ug, Hg, pitch = grid_search(c, lo, hi, m=200 if k == 2 else 60)
    assert H >= Hg - 1e-9
    assert np.abs(u - ug).max() <= pitch
    assert np.all(u >= lo) and np.all(u <= hi)


def test_zero_cost_value_and_policy_vanish():
    value, policy = solve_hjb(constant_model(), HALF)
    assert not np.any(value.values) and not np.any(policy.controls)


def test_symmetric_model_value_is_symmetric_and_decreasing():
    spec = constant_model(J=[[1, 1], [1, 1]])
    value, _ = solve_hjb(spec, HALF)
    V = value.values
    assert np.abs(V[:, 0] - V[:, 1]).max() <= 1e-9
    assert np.all(np.diff(V[:, 0]) < 0)
    assert V[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_value_matches_discrete_dp_oracle():
    spec = constant_model(J=[[1, 1], [1, 1]])
    value, _ = solve_hjb(spec, HALF)
    oracle = discrete_dp_value([[1, 1], [1, 1]], [[0, 1], [1, 0]], [0, 0], [0, 0], [1, 1])
    assert abs(value.values[0, 0] - oracle[0]) <= 2e-3


def test_asymmetric_value_matches_discrete_dp_oracle():
    J = [[0.3, 1.2], [0.8, 0.1]]
    spec = make_model(2, 1.0, {(0, 1): "0.7", (1, 0): "1.3"}, [0, 0], [1, 1], cost=J, terminal=[0.0, 0.4])
    value, _ = solve_hjb(spec, HALF)
    oracle = discrete_dp_value(J, [[0, 0.7], [1.3, 0]], [0.0, 0.4], [0, 0], [1, 1])
    assert np.abs(value.values[0] - oracle).max() <= 2e-3


def test_terminal_condition_is_exact(corpus):
    spec = corpus["cycle3"]
    flow = Flow.constant([0.2, 0.3, 0.5], np.linspace(0, 1, 201))
    value, policy = solve_hjb(spec, flow)
    assert value.values[-1].tobytes() == spec.terminal.tobytes()
    assert np.all(policy.controls >= spec.control_set.lo) and np.all(policy.controls <= spec.control_set.hi)


def test_policy_grid_covers_half_steps():
    flow = Flow.constant([0.5, 0.5], np.linspace(0, 1, 11))
    _, policy = solve_hjb(imitation_model(J=[[1, 0], [0, 1]], terminal=[0, 1]), flow)
    assert len(policy.times) == 21
    assert policy.times[1] == pytest.approx(0.05)


def test_cost_domination_orders_values(corpus):
    low = [[0.5, 1.0], [0.2, 0.5]]
    high = [[0.5, 1.5], [0.9, 0.6]]
    flow = solve_kinetic(corpus["crowd"], ConstantPolicy(np.full((2, 2), 1.0)), [0.7, 0.3], dt=1e-3)
    rates = {(0, 1): "0.5 + x2", (1, 0): "0.5 + x1"}
    V = solve_hjb(make_model(2, 1.0, rates, [0, 0], [2, 2], cost=low, terminal=[0, 0.5]), flow)[0].values
    Vp = solve_hjb(make_model(2, 1.0, rates, [0, 0], [2, 2], cost=high, terminal=[0, 0.5]), flow)[0].values
    assert np.all(Vp >= V - 1e-8)


def _perturbed(base, eps):
    bump = np.sin(np.pi * base.times)[:, None] * np.array([1.0, -1.0])
    dbump = np.pi * np.cos(np.pi * base.times)[:, None] * np.array([1.0, -1.0])
    return Flow(base.times, base.states + eps * bump, base.derivs + eps * dbump)


@pytest.mark.parametrize("which", ["value", "policy"])
def test_curve_lipschitz_ratio_is_stable(corpus, which):
    spec = corpus["crowd"]
    base = solve_kinetic(spec, ConstantPolicy(np.full((2, 2), 1.0)), [0.6, 0.4], dt=1e-3)
    V0, P0 = solve_hjb(spec, base)
    ratios = []
    for eps in (0.02, 0.01, 0.005):
        V, P = solve_hjb(spec, _perturbed(base, eps))
        diff = np.abs(V.values - V0.values).max() if which == "value" else np.abs(P.controls - P0.controls).max()
        ratios.append(diff / eps)
    assert all(np.isfinite(ratios)) and max(ratios) > 0
    for a, b in zip(ratios, ratios[1:]):
        assert abs(a / b - 1) <= 0.25


def test_backward_solve_refines_at_fourth_order(corpus):
    spec = corpus["crowd"]
    ends = []
    for n in (10, 20, 40, 80):
        times = np.linspace(0, 1, n + 1)
        x = np.stack([0.6 + 0.1 * times, 0.4 - 0.1 * times], axis=1)
        flow = Flow(times, x, np.tile([0.1, -0.1], (n + 1, 1)))
        ends.append(solve_hjb(spec, flow)[0].values[0])
    changes = [np.abs(b - a).max() for a, b in zip(ends, ends[1:])]
    assert all(a / b > 10 for a, b in zip(changes, changes[1:])), changes


def test_policy_at_examples():
    times = np.array([0.0, 1.0])
    grid = PolicyGrid(times, np.stack([np.zeros((2, 2)), np.ones((2, 2))]), [0, 0], [1, 1])
    assert policy_at(grid, 0.0, 1).tolist() == [0.0, 0.0]
    assert policy_at(grid, 1.0, 0).tolist() == [1.0, 1.0]
    assert policy_at(grid, 0.5, 0).tolist() == [0.5, 0.5]
    const = PolicyGrid(np.linspace(0, 1, 5), np.full((5, 2, 2), 0.3), [0, 0], [1, 1])
    for t in (0.0, 0.13, 0.77, 1.0):
        assert policy_at(const, t, 1) == pytest.approx([0.3, 0.3], abs=1e-15)
    with pytest.raises(DomainError):
        policy_at(grid, 1.5, 0)


def test_policy_grid_non_uniform_times():
    times = np.array([0.0, 0.1, 1.0])
    grid = PolicyGrid(times, np.stack([np.zeros((2, 2)), np.ones((2, 2)), np.zeros((2, 2))]), [0, 0], [1, 1])
    assert policy_at(grid, 0.05, 0) == pytest.approx([0.5, 0.5])
    assert policy_at(grid, 0.55, 0) == pytest.approx([0.5, 0.5])
    batch = grid.batch(np.array([0.05, 0.55]))
    assert batch[:, 0] == pytest.approx(np.full((2, 2), 0.5))


def test_grid_policy_is_interpolated_within_the_box():
    rng = np.random.default_rng(3)
    for lo, hi in itertools.product([0.0, 0.2], [0.8, 1.0]):
        C = rng.uniform(lo, hi, size=(6, 2, 2))
        grid = PolicyGrid(np.linspace(0, 1, 6), C, [lo, lo], [hi, hi])
        for t in rng.uniform(0, 1, 20):
            u = grid(t)
            assert np.all(u >= lo) and np.all(u <= hi)
