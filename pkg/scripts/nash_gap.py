"""Largest unilateral gain against the equilibrium policy as N grows (crowd model).

    python scripts/nash_gap.py [--N 4,8,16,32,64] [--out results]
"""

import argparse
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from jumpmfg.experiments import BEST_RESPONSE, run_nash_gap_experiment
from jumpmfg.mfg import solve_mfg
from jumpmfg.modelfile import load_model
from jumpmfg.policy import ConstantPolicy

MODELS = Path(__file__).resolve().parent.parent / "models"


@dataclass
class NashGapConfig:
    model: str = "crowd"
    x0: list = field(default_factory=lambda: [0.75, 0.25])
    N: list = field(default_factory=lambda: [4, 8, 16, 32])
    dt: float = None
    out: str = "results"


def run(cfg):
    spec = load_model(MODELS / f"{cfg.model}.mfg")
    eq = solve_mfg(spec, cfg.x0, dt=cfg.dt)
    k = spec.k
    library = [BEST_RESPONSE,
               ConstantPolicy(np.zeros((k, k)), name="zero"),
               ConstantPolicy(spec.control_set.hi, k, name="upper")]
    res = run_nash_gap_experiment(spec, eq, library, cfg.N)
    res.write(cfg.out, f"nash_gap_{cfg.model}")
    for r in res.rows:
        print(f"N={r['N']:4d}  gap={r['gap']:.4e}  via {r['argmax']}")
    print(res.summary())


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", default="4,8,16,32")
    p.add_argument("--out", default="results")
    a = p.parse_args()
    run(NashGapConfig(N=[int(v) for v in a.N.split(",")], out=a.out))
