import json
import math

import numpy as np
import pytest

from jumpmfg.errors import UsageError
from jumpmfg.experiments import (BEST_RESPONSE, fit_loglog, jump_generator_apply, run_convergence_experiment,
                                 run_nash_gap_experiment, run_taylor_check, weak_norm_dictionary)
from jumpmfg.kinetic import Observable, koopman_generator
from jumpmfg.mfg import solve_mfg
from jumpmfg.policy import ConstantPolicy

from conftest import constant_model

ONES = ConstantPolicy(np.ones((2, 2)))
P_STAY = (1 + math.exp(-2.0)) / 2
X1 = Observable.coordinate(0, 2)
X1_SQ = Observable.product(0, 0, 2)


def test_fit_examples():
    Ns = [4, 8, 16, 32]
    fit = fit_loglog(Ns, [3.0 / n for n in Ns])
    assert fit.slope == pytest.approx(-1.0, abs=1e-12) and fit.half_width <= 1e-10
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit_loglog(Ns, [1e-15, 1e-13, 0.1, 1e-16]) is None
    assert math.isinf(fit_loglog([2, 4], [1.0, 0.5]).half_width)


def test_weak_norm_dictionary():
    names = [G.name for G in weak_norm_dictionary(3)]
    assert names == ["x1", "x2", "x3", "x1*x1", "x1*x2", "x1*x3", "x2*x2", "x2*x3", "x3*x3"]


def test_quadratic_convergence_matches_binomial_variance():
    # from a pure start every player moves independently, so E[(n1/N)^2] - p^2 = p (1 - p) / N
    Ns = [4, 8, 16, 32, 64]
    res = run_convergence_experiment(constant_model(), ONES, X1_SQ, Ns, x0=[1.0, 0.0], dt=5e-4)
    for r in res.rows:
        assert r["metric"] == pytest.approx(P_STAY * (1 - P_STAY) / r["N"], abs=1e-8)
    assert -1.2 <= res.slope <= -0.8
    assert res.config["initial_coupling_k1"] == 0.0


def test_linear_observable_has_undefined_slope():
    res = run_convergence_experiment(constant_model(), ONES, X1, [4, 8, 16], x0=[1.0, 0.0], dt=5e-4)
    assert max(res.column("metric")) <= 1e-12
    assert res.fit is None and res.slope is None and res.notes
    assert res.summary().endswith("slope undefined")


def test_monte_carlo_mode_agrees_with_exact(corpus):
    spec = corpus["crowd"]
    U = ConstantPolicy(np.array([[0.0, 1.2], [0.7, 0.0]]))
    kw = dict(x0=[0.75, 0.25], dt=1e-3)
    exact = run_convergence_experiment(spec, U, X1_SQ, [4, 12], **kw)
    mc = run_convergence_experiment(spec, U, X1_SQ, [4, 12], mode="mc", replications=10_000, seed=5, **kw)
    for a, b in zip(exact.rows, mc.rows):
        assert abs(a["mean"] - b["mean"]) <= 4 * b["stderr"]
    assert mc.config["seeds"] == [9, 17]


def test_csv_is_deterministic(tmp_path):
    run = lambda: run_convergence_experiment(constant_model(), ONES, X1_SQ, [2, 4], x0=[0.5, 0.5], dt=1e-3)
    a, b = run(), run()
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().startswith("N,metric,stderr,mean,weak\r\n")
    csv_path, json_path = a.write(tmp_path, "conv")
    assert csv_path.read_bytes() == b.to_csv().encode()
    meta = json.loads(json_path.read_text())
    assert meta["fit"]["points"] == 2 and "wall_time_s" in meta
    assert "wall" not in a.to_csv()


def test_experiment_argument_checks():
    with pytest.raises(UsageError):
        run_convergence_experiment(constant_model(), ONES, X1, [4, 2])
    with pytest.raises(UsageError):
        run_convergence_experiment(constant_model(), ONES, X1, [2, 4], mode="fast")


def test_equilibrium_only_library_has_zero_gap(corpus):
    eq = solve_mfg(corpus["crowd"], [0.75, 0.25], dt=1 / 200)
    res = run_nash_gap_experiment(corpus["crowd"], eq, [], [2, 4, 6])
    assert res.column("gap") == [0.0, 0.0, 0.0] and res.column("raw_gap") == [0.0, 0.0, 0.0]
    assert res.fit is None


def test_zero_cost_game_has_zero_gap():
    spec = constant_model()
    eq = solve_mfg(spec, [0.5, 0.5], dt=1 / 200)
    lib = [ConstantPolicy(np.zeros((2, 2)), name="zero"), ConstantPolicy(np.ones((2, 2)), name="upper"),
           BEST_RESPONSE]
    res = run_nash_gap_experiment(spec, eq, lib, [2, 4])
    assert res.column("gap") == [0.0, 0.0]


def test_best_response_gap_is_positive_and_shrinks(corpus):
    spec = corpus["crowd"]
    eq = solve_mfg(spec, [0.75, 0.25], dt=1 / 400)
    res = run_nash_gap_experiment(spec, eq, [BEST_RESPONSE, ConstantPolicy(np.zeros((2, 2)), name="zero")],
                                  [4, 8])
    gaps = res.column("gap")
    assert 0 < gaps[1] < gaps[0]
    assert res.column("argmax") == [BEST_RESPONSE, BEST_RESPONSE]
    with pytest.raises(UsageError):
        run_nash_gap_experiment(spec, eq, ["mystery"], [2])


def _quadratic_remainder(A, spec, t, x, N, U):
    """Second-order Taylor term of a quadratic observable, which is exact for quadratics."""
    nu = spec.rates(t, x)
    k = spec.k
    total = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                d = np.eye(k)[j] - np.eye(k)[i]
                total += x[i] * nu[i, j] * U[i, j] * (d @ A @ d)
    return total / N


def test_jump_generator_minus_drift_is_the_quadratic_remainder(corpus):
    rng = np.random.default_rng(11)
    for name in ("crowd", "cycle3"):
        spec = corpus[name]
        k = spec.k
        A = rng.normal(size=(k, k))
        F = Observable.quadratic(A, rng.normal(size=k))
        U = spec.control_set.lo + rng.uniform(size=(k, k)) * (spec.control_set.hi - spec.control_set.lo)
        for N in (3, 10, 40):
            n = rng.multinomial(N, np.ones(k) / k)
            x = n / N
            diff = jump_generator_apply(F, spec, 0.3, n, N, U) - koopman_generator(F, spec, 0.3, x, U)
            assert diff == pytest.approx(_quadratic_remainder(A, spec, 0.3, x, N, U), abs=1e-10)


def test_taylor_check_examples(corpus):
    samples = [[0.5, 0.5], [0.9, 0.1], [0.2, 0.8]]
    res = run_taylor_check(constant_model(), X1_SQ, [4, 8, 16, 32], samples)
    # constant unit rates and controls: the remainder is (x1 + x2) / N = 1 / N at every state
    assert res.column("metric") == pytest.approx([1 / 4, 1 / 8, 1 / 16, 1 / 32], abs=1e-12)
    assert res.slope == pytest.approx(-1.0, abs=1e-9)
    lin = run_taylor_check(corpus["crowd"], X1, [4, 8, 16], samples)
    assert max(lin.column("metric")) <= 1e-12 and lin.fit is None
    const = run_taylor_check(corpus["crowd"], Observable.constant(2.0, 2), [4, 8], samples)
    assert const.column("metric") == [0.0, 0.0]


def test_imitation_gap_needs_the_best_response(corpus):
    # Gamma beats every constant policy outright, so a constant-only library clamps the gap to zero
    spec = corpus["imitation"]
    eq = solve_mfg(spec, [0.75, 0.25], dt=1 / 500)
    constants = [ConstantPolicy(np.full((2, 2), c), name=f"const{c}") for c in (0.0, 0.25, 0.5, 0.75, 1.0)]
    Ns = [4, 8, 16, 32]
    only = run_nash_gap_experiment(spec, eq, constants, Ns)
    assert only.column("gap") == [0.0] * 4 and only.fit is None
    res = run_nash_gap_experiment(spec, eq, constants + [BEST_RESPONSE], Ns)
    gaps = res.column("gap")
    assert all(b <= a for a, b in zip(gaps, gaps[1:])) and res.slope <= -0.7
