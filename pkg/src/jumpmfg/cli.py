"""Command-line entry point: ``jumpmfg <subcommand> <model> ...``.

Exit codes: 0 success, 1 other failure, 2 parse or validation failure,
3 non-convergence of the fixed point, 4 state space above capacity.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import CapacityError, MFGError, ModelError
from .experiments import (BEST_RESPONSE, run_convergence_experiment, run_nash_gap_experiment,
                          run_taylor_check)
from .kinetic import Observable
from .mfg import solve_mfg
from .model import validate_model
from .modelfile import load_model
from .nplayer import count_space_size, nearest_counts, simulate_ctmc, simulate_endpoints, state_capacity
from .policy import policy_from_dict, upper_policy, zero_policy

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_CAPACITY = 0, 1, 2, 3, 4


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _dt(text):
    if text == "auto":
        return None
    v = float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("dt must be positive")
    return v


def _x0(args, spec):
    if args.x0 is None:
        return np.full(spec.k, 1.0 / spec.k)
    return np.asarray(args.x0, dtype=float)


def _load_accepted(path):
    spec = load_model(path)
    report = validate_model(spec)
    if not report.accepted:
        lines = "\n".join(f"  {v}" for v in report.violations)
        raise ModelError(f"model {path} fails validation:\n{lines}")
    return spec


def _policy(arg, spec, eq_factory):
    if arg in (None, "zero"):
        return zero_policy(spec)
    if arg == "upper":
        return upper_policy(spec)
    if arg == "equilibrium":
        return eq_factory().policy
    with open(arg, encoding="utf-8") as fh:
        return policy_from_dict(json.load(fh), spec)


def _emit(result, args):
    if args.out:
        paths = result.write(args.out, getattr(args, "stem", None) or result.name)
        print(f"wrote {paths[0]} and {paths[1]}", file=sys.stderr)
    else:
        sys.stdout.write(result.to_csv())
    print(result.summary(), file=sys.stderr)


def cmd_validate(args):
    spec = load_model(args.model)
    report = validate_model(spec, args.grid)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.accepted else EXIT_INVALID


def _equilibrium(args, spec):
    return solve_mfg(spec, _x0(args, spec), tol=args.tol, max_iter=args.max_iter,
                     damping=args.damping, dt=args.dt)


def cmd_solve_mfg(args):
    spec = _load_accepted(args.model)
    eq = _equilibrium(args, spec)
    summary = {"converged": eq.converged, "iterations": eq.iterations, "tol": eq.tol,
               "damping": eq.damping, "dt": eq.dt, "residual_history": eq.residual_history,
               "x0": eq.flow.states[0].tolist(), "x_T": eq.flow.final.tolist(),
               "value_t0": eq.value.values[0].tolist(), "model_digest": spec.digest()}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "flow.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["t"] + [f"x{l + 1}" for l in range(spec.k)]
                       + [f"V{l + 1}" for l in range(spec.k)])
            for t, x, v in zip(eq.flow.times, eq.flow.states, eq.value.values):
                w.writerow([repr(float(t))] + [repr(float(a)) for a in x] + [repr(float(a)) for a in v])
        (out / "policy.json").write_text(json.dumps(eq.policy.to_dict()) + "\n")
        (out / "equilibrium.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    if not eq.converged:
        print(f"no convergence after {eq.iterations} iterations (residual {eq.residual:.3e})",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_simulate(args):
    spec = _load_accepted(args.model)
    policy = _policy(args.policy, spec, lambda: _equilibrium(args, spec))
    n0 = nearest_counts(_x0(args, spec), args.N)
    w = csv.writer(sys.stdout, lineterminator="\r\n")
    labels = [f"n{l + 1}" for l in range(spec.k)]
    if args.reps > 1:
        ends = simulate_endpoints(spec, policy, args.N, n0, 0.0, spec.horizon, args.reps, args.seed)
        w.writerow(["replication"] + labels)
        for r, n in enumerate(ends):
            w.writerow([r] + n.tolist())
    else:
        traj = simulate_ctmc(spec, policy, args.N, n0, 0.0, spec.horizon, args.seed)
        w.writerow(["t"] + labels)
        for t, n in zip(traj.times, traj.states):
            w.writerow([repr(float(t))] + n.tolist())
    return EXIT_OK


def _observable(args, spec):
    return Observable.from_expression(args.observable or "x1*x1", spec.k)


def cmd_convergence(args):
    spec = _load_accepted(args.model)
    mode = args.mode
    if mode == "exact":
        too_big = [N for N in args.N if count_space_size(spec.k, N) > state_capacity()]
        if too_big:
            if not args.fallback_mc:
                raise CapacityError(f"exact mode exceeds capacity for N={too_big}; "
                                    "pass --fallback-mc to use Monte Carlo")
            print(f"warning: exact mode exceeds capacity for N={too_big}; falling back to Monte Carlo",
                  file=sys.stderr)
            mode = "mc"
    source = _policy(args.policy, spec, lambda: _equilibrium(args, spec))
    result = run_convergence_experiment(spec, source, _observable(args, spec), args.N, mode=mode,
                                        replications=args.reps, seed=args.seed, dt=args.dt,
                                        x0=_x0(args, spec))
    _emit(result, args)
    return EXIT_OK


def cmd_nash_gap(args):
    spec = _load_accepted(args.model)
    eq = _equilibrium(args, spec)
    if not eq.converged:
        print("equilibrium did not converge; gaps are not meaningful", file=sys.stderr)
        return EXIT_NONCONVERGED
    library = [BEST_RESPONSE]
    if args.deviations:
        with open(args.deviations, encoding="utf-8") as fh:
            entries = json.load(fh)
        library = []
        for d in entries:
            if d.get("type") == BEST_RESPONSE:
                library.append(BEST_RESPONSE)
            else:
                library.append(policy_from_dict(d, spec))
    result = run_nash_gap_experiment(spec, eq, library, args.N)
    _emit(result, args)
    return EXIT_OK


def cmd_taylor(args):
    spec = _load_accepted(args.model)
    samples = [np.asarray(s) for s in args.samples] if args.samples else \
        [np.full(spec.k, 1.0 / spec.k), np.eye(spec.k)[0] * 0.6 + 0.4 / spec.k]
    result = run_taylor_check(spec, _observable(args, spec), args.N, samples)
    _emit(result, args)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="jumpmfg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def model_cmd(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("model", help="model file")
        s.set_defaults(func=fn)
        return s

    def mfg_opts(s):
        s.add_argument("--x0", type=_float_list, help="initial law, default uniform")
        s.add_argument("--tol", type=float, default=1e-8)
        s.add_argument("--max-iter", type=int, default=200)
        s.add_argument("--damping", type=float, default=0.5)
        s.add_argument("--dt", type=_dt, default=None, help="step or 'auto' (T/2000)")

    s = model_cmd("validate", cmd_validate, "check rate and cost hypotheses on a grid")
    s.add_argument("--grid", type=int, default=20, help="simplex lattice subdivisions")

    s = model_cmd("solve-mfg", cmd_solve_mfg, "solve the mean-field equilibrium")
    mfg_opts(s)
    s.add_argument("--out", help="directory for flow.csv, policy.json, equilibrium.json")

    s = model_cmd("simulate", cmd_simulate, "simulate the N-player chain")
    mfg_opts(s)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--reps", type=int, default=1, help="replications; above 1 prints endpoints only")
    s.add_argument("--policy", default="zero", help="zero, upper, equilibrium or a policy JSON file")

    s = model_cmd("convergence", cmd_convergence, "N-player bias against the kinetic limit")
    mfg_opts(s)
    s.add_argument("--N", type=_int_list, default=[4, 8, 16, 32, 64])
    s.add_argument("--mode", choices=("exact", "mc"), default="exact")
    s.add_argument("--reps", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", default="upper", help="zero, upper, equilibrium or a policy JSON file")
    s.add_argument("--observable", help="expression in x1..xk, default x1*x1")
    s.add_argument("--fallback-mc", action="store_true", help="use Monte Carlo where exact mode is too large")
    s.add_argument("--out")

    s = model_cmd("nash-gap", cmd_nash_gap, "epsilon-Nash gap of the equilibrium policy")
    mfg_opts(s)
    s.add_argument("--N", type=_int_list, default=[4, 8, 16, 32])
    s.add_argument("--deviations", help="JSON list of policies; default: best response only")
    s.add_argument("--out")

    s = model_cmd("taylor", cmd_taylor, "second-order remainder of the N-player generator")
    s.add_argument("--N", type=_int_list, default=[8, 16, 32, 64, 128])
    s.add_argument("--observable", help="expression in x1..xk, default x1*x1")
    s.add_argument("--samples", type=_float_list, nargs="*", help="sample states, each comma-separated")
    s.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (MFGError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
