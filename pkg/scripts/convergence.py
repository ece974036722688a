"""Bias of E F(n_T / N) against the kinetic endpoint, for every corpus model at its equilibrium.

    python scripts/convergence.py [--mode mc] [--out results]
"""

import argparse
from dataclasses import dataclass, field
from pathlib import Path

from jumpmfg.experiments import run_convergence_experiment
from jumpmfg.kinetic import Observable
from jumpmfg.mfg import solve_mfg
from jumpmfg.modelfile import load_model

MODELS = Path(__file__).resolve().parent.parent / "models"


@dataclass
class ConvergenceConfig:
    models: dict = field(default_factory=lambda: {
        "imitation": [0.75, 0.25], "crowd": [0.75, 0.25], "cycle3": [0.5, 0.25, 0.25]})
    N: list = field(default_factory=lambda: [4, 8, 16, 32, 64])
    mode: str = "exact"
    replications: int = 10_000
    seed: int = 0
    dt: float = 1e-3
    out: str = "results"


def run(cfg):
    for name, x0 in cfg.models.items():
        spec = load_model(MODELS / f"{name}.mfg")
        eq = solve_mfg(spec, x0, dt=cfg.dt)
        if not eq.converged:
            print(f"{name}: equilibrium did not converge, skipped")
            continue
        F = Observable.product(0, 0, spec.k)
        res = run_convergence_experiment(spec, eq, F, cfg.N, cfg.mode, cfg.replications, cfg.seed)
        res.write(cfg.out, f"convergence_{name}_{cfg.mode}")
        print(f"{name:10s} {res.summary()}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--out", default="results")
    a = p.parse_args()
    run(ConvergenceConfig(mode=a.mode, out=a.out))
