"""Run every shipped config through the CLI and collect the PASS/FAIL lines.

    python scripts/run_experiments.py [--out-dir results] [--quick]

``--quick`` divides replicate counts by 10 for a smoke run; the resulting
verdicts are not the acceptance verdicts.
"""
import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

RUNS = [
    ("geometry-check", "geometry_disk.yaml", None),
    ("oracle-test", "oracle_poisson_max.yaml", 10_000),
    ("tail-test", "tail_gaussian_point.yaml", 200_000),
    ("evt-test", "frechet_gaussian_squares.yaml", 2_000),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default=str(ROOT / "results"))
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    status = 0
    for command, cfg, reps in RUNS:
        cmd = [sys.executable, "-m", "levyfield.cli", command, str(ROOT / "configs" / cfg),
               "--out-dir", str(Path(args.out_dir) / Path(cfg).stem)]
        if args.quick and reps:
            cmd += ["--replicates", str(max(100, reps // 10))]
        if args.workers:
            cmd += ["--workers", str(args.workers)]
        print(f"$ levyfield {command} {cfg}", flush=True)
        rc = subprocess.call(cmd)
        status = max(status, rc)
    for cfg in ("power_divergent.yaml", "stable_infinite_variation.yaml"):
        print(f"$ levyfield validate {cfg}  (expected to be rejected)", flush=True)
        subprocess.call([sys.executable, "-m", "levyfield.cli", "validate", str(ROOT / "configs" / cfg)])
    sys.exit(status)


if __name__ == "__main__":
    main()
