"""Figures from result JSON files written by the CLI.

    python scripts/plot_results.py results/frechet_gaussian_squares/frechet.json [more.json ...] --out figs

Needs matplotlib (``pip install levyfield[plots]``).
"""
import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_frechet(payload, ax):
    recs = payload["records"]
    for n in sorted({r["n"] for r in recs}):
        rows = [r for r in recs if r["n"] == n]
        x = [r["x"] for r in rows]
        ax.errorbar(x, [r["ecdf"] for r in rows],
                    yerr=[[r["ecdf"] - r["ci_low"] for r in rows], [r["ci_high"] - r["ecdf"] for r in rows]],
                    marker="o", ls="", capsize=3, label=f"|C_n| = {rows[0]['volume']:g}")
    xs = sorted({r["x"] for r in recs})
    ax.plot(xs, [next(r["frechet"] for r in recs if r["x"] == x) for x in xs], "k--", label="Fréchet limit")
    ax.set_xscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("P(sup X / a_n <= x)")


def plot_tail_ratio(payload, ax):
    for field in sorted({r["field"] for r in payload["records"]}):
        rows = [r for r in payload["records"] if r["field"] == field and r["usable"]]
        ax.errorbar([r["x"] for r in rows], [r["ratio"] for r in rows],
                    yerr=[[r["ratio"] - r["ci_low"] for r in rows], [r["ci_high"] - r["ratio"] for r in rows]],
                    marker="o", capsize=3, label=field)
    ax.axhline(payload["summary"]["target"], color="k", ls="--", label="limit")
    ax.set_xscale("log")
    ax.set_xlabel("level x")
    ax.set_ylabel("P(sup X > x) / rho((x, inf))")


def plot_perturbed(payload, ax):
    last = max(r["n"] for r in payload["records"])
    rows = [r for r in payload["records"] if r["n"] == last]
    x = [r["x"] for r in rows]
    ax.errorbar(x, [r["difference"] for r in rows],
                yerr=[[r["difference"] - r["ci_low"] for r in rows], [r["ci_high"] - r["difference"] for r in rows]],
                marker="o", ls="", capsize=3)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("perturbed minus unperturbed CDF")


PLOTTERS = {"frechet": plot_frechet, "tail_ratio": plot_tail_ratio, "perturbed_frechet": plot_perturbed}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("paths", nargs="+")
    ap.add_argument("--out", default="figs")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in args.paths:
        payload = json.loads(Path(p).read_text())
        plotter = PLOTTERS.get(payload["experiment"])
        if plotter is None:
            print(f"skip {p}: no plot for {payload['experiment']}")
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        plotter(payload, ax)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=8)
        fig.tight_layout()
        target = out / f"{Path(p).parent.name}_{payload['experiment']}.png"
        fig.savefig(target, dpi=150)
        plt.close(fig)
        print(target)


if __name__ == "__main__":
    main()
