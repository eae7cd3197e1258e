"""Mean empty-slot mass and class histogram of the simplex sampler across drift scales w.

Writes a plot-ready CSV (one row per w) and prints it.
"""

import argparse
import csv
import sys
from dataclasses import dataclass, field

import numpy as np

from score_xform.sde import VpSchedule
from score_xform.simplexlab import CategoricalSource, run_simplex_sampler


@dataclass
class SweepConfig:
    weights: list = field(default_factory=lambda: [0.8, 0.9, 1.0, 1.1])
    n_samples: int = 10_000
    steps: int = 500
    seed: int = 0
    k: int = 12
    epsilon: float = 0.01


def run(cfg: SweepConfig):
    source = CategoricalSource(cfg.k + 1, cfg.epsilon)
    rows = []
    for w in cfg.weights:
        r = run_simplex_sampler(source, VpSchedule(), w, cfg.n_samples, cfg.steps, cfg.seed)
        rows.append({"w": w, "mean_empty_mass": r.mean_empty_mass, "clamp_rate": r.clamp_rate,
                     **{f"class_{i}": c / cfg.n_samples for i, c in enumerate(r.class_histogram)}})
    rows.append({"w": "source", "mean_empty_mass": "", "clamp_rate": "",
                 **{f"class_{i}": p for i, p in enumerate(source.frequencies)}})
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--weights", type=float, nargs="+", default=SweepConfig().weights)
    p.add_argument("--n-samples", type=int, default=SweepConfig.n_samples)
    p.add_argument("--steps", type=int, default=SweepConfig.steps)
    p.add_argument("--seed", type=int, default=SweepConfig.seed)
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    a = p.parse_args(argv)
    rows = run(SweepConfig(a.weights, a.n_samples, a.steps, a.seed))
    fh = sys.stdout if a.out == "-" else open(a.out, "w", newline="")
    writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.6g}" if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
