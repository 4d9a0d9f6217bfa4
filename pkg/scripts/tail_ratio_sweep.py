"""Finite-level behaviour of P(X_0 > x) / rho((x, inf)) for the 1-d Gaussian kernel.

Sweeps the exceedance level p over several decades and prints the ratio
with its Wilson interval next to the limit sqrt(pi), showing how fast the
pre-asymptotic excess from the rest of the field dies out.

    python scripts/tail_ratio_sweep.py [--replicates 200000] [--seed 7]
"""
import argparse
import math

import numpy as np

from levyfield.extremes import ExperimentConfig, tail_ratio_experiment
from levyfield.geometry import Point
from levyfield.kernels import Kernel
from levyfield.regvar import TailModel


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicates", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    levels = tuple(10.0 ** -e for e in np.arange(1.0, 3.51, 0.5))
    cfg = ExperimentConfig(TailModel("pareto", args.alpha), Kernel("gaussian", 1), Point((0.0,)),
                           exceedance_levels=levels, replicates=args.replicates, seed=args.seed)
    res = tail_ratio_experiment(cfg, workers=args.workers)
    target = res.summary["target"]
    print(f"limit = {target:.5f}  (sqrt(pi) = {math.sqrt(math.pi):.5f} for alpha = 1)")
    print(f"{'p':>10} {'x':>10} {'hits':>7} {'ratio':>8} {'95% interval':>20}")
    for r in res.records:
        if r["usable"]:
            print(f"{r['exceedance_level']:10.3g} {r['x']:10.4g} {r['exceedances']:7d} {r['ratio']:8.4f} "
                  f"[{r['ci_low']:.4f}, {r['ci_high']:.4f}]")
        else:
            print(f"{r['exceedance_level']:10.3g} {r['x']:10.4g} {0:7d}   (no exceedances)")


if __name__ == "__main__":
    main()
