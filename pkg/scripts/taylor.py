"""Gap between the N-player jump generator and its drift part, for quadratic and linear observables.

    python scripts/taylor.py [--out results]
"""

import argparse
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from jumpmfg.experiments import run_taylor_check
from jumpmfg.kinetic import Observable
from jumpmfg.modelfile import load_model

MODELS = Path(__file__).resolve().parent.parent / "models"


@dataclass
class TaylorConfig:
    models: tuple = ("constant", "imitation", "crowd", "cycle3")
    N: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    samples_per_model: int = 5
    seed: int = 0
    out: str = "results"


def run(cfg):
    rng = np.random.default_rng(cfg.seed)
    for name in cfg.models:
        spec = load_model(MODELS / f"{name}.mfg")
        k = spec.k
        samples = rng.dirichlet(np.ones(k), size=cfg.samples_per_model)
        for F in (Observable.product(0, 0, k), Observable.linear(np.arange(1.0, k + 1))):
            res = run_taylor_check(spec, F, cfg.N, samples)
            res.write(cfg.out, f"taylor_{name}_{F.name.replace('*', '')}")
            print(f"{name:10s} {F.name:8s} {res.summary()}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    run(TaylorConfig(out=p.parse_args().out))
