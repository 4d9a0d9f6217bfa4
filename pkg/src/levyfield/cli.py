"""Command-line entry point: ``levyfield <subcommand> CONFIG [options]``.

Exit status is 0 when every verdict passes, 1 when a verdict fails (the
failing criterion is printed) and 2 for an invalid config.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import click

from . import __version__
from .config import ConfigError, build_experiment, config_digest, load_config, validate as validate_config
from .extremes import (ExperimentResult, Verdict, _jsonable, frechet_experiment, perturbed_frechet_experiment,
                       tail_ratio_experiment)
from .geometry import as_union, count_limit_experiment, intrinsic_volumes
from .simulator import (SimulationWindow, default_margin, evaluate_field, field_holder, grid_supremum,
                        simulate_heavy, simulate_side_fields)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


class Run:
    """Collects outputs of one invocation and writes the manifest last."""

    def __init__(self, command: str, cfg, out_dir: Path, seed):
        self.command = command
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.start = _now()
        self.outputs = {}

    def write_result(self, result: ExperimentResult, stem: str) -> None:
        jpath = self.out_dir / f"{stem}.json"
        cpath = self.out_dir / f"{stem}.csv"
        atomic_write(jpath, result.to_json() + "\n")
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{cpath.name}.")
        os.close(fd)
        result.write_csv(tmp)
        os.replace(tmp, cpath)
        self.outputs[stem] = {"json": str(jpath), "csv": str(cpath)}

    def finish(self, digest: str) -> None:
        manifest = {"command": self.command, "config_digest": digest, "version": __version__,
                    "seed": self.seed, "start": self.start, "end": _now(), "outputs": self.outputs}
        atomic_write(self.out_dir / f"{self.command}.manifest.json", json.dumps(manifest, indent=2) + "\n")


def _load(config_path, seed, replicates):
    try:
        loaded = load_config(config_path)
        exp = build_experiment(loaded, seed=seed, replicates=replicates)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except OSError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    report = validate_config(loaded)
    if not report.ok:
        click.echo(report.render(), err=True)
        sys.exit(2)
    return loaded, exp


def _report(results) -> int:
    failed = []
    for res in results:
        for v in res.verdicts:
            tag = "PASS" if v.passed else "FAIL"
            click.echo(f"{tag} [{res.experiment}] {v.criterion} ({v.tolerance}) {v.detail}".rstrip())
            if not v.passed:
                failed.append(f"{res.experiment}: {v.criterion}")
    if failed:
        click.echo("failing criteria: " + "; ".join(failed), err=True)
        return 1
    return 0


_common = [
    click.argument("config_path", type=click.Path(dir_okay=False)),
    click.option("--seed", type=int, default=None, help="Override the config seed."),
    click.option("--replicates", type=int, default=None, help="Override the replicate count."),
    click.option("--out-dir", type=click.Path(file_okay=False), default="results", show_default=True),
    click.option("--workers", type=int, default=None, help="Worker processes (capped by LEVYFIELD_WORKERS)."),
]


def common(f):
    for deco in reversed(_common):
        f = deco(f)
    return f


@click.group()
@click.version_option(__version__)
def main():
    """Simulate Lévy-driven moving-average fields and check their extremes."""


@main.command("geometry-check")
@common
def geometry_check(config_path, seed, replicates, out_dir, workers):
    """Cube-grid count ratios along the scaled index sets."""
    loaded, exp = _load(config_path, seed, replicates)
    run = Run("geometry-check", loaded.raw, out_dir, exp.seed)
    geo = loaded.raw.get("geometry", {})
    k_list = geo.get("k_list", [exp.k])
    L = int(geo.get("L", exp.L))
    scalings = geo.get("scalings") or [r for r, _ in exp.ladder()]
    rows = count_limit_experiment(exp.index_set, scalings, k_list, L)
    records, verdicts = [], []
    for row in rows:
        bound = 5.0 / math.sqrt(row.k)
        dp, dq = abs(row.p_ratio_last - 1), abs(row.q_ratio_last - 1)
        records.append({**row.__dict__, "bound": bound, "p_dev": dp, "q_dev": dq})
        verdicts.append(Verdict(f"k={row.k}: count ratios within 5/sqrt(k)", dp <= bound and dq <= bound,
                                f"<= {bound:.4g}", f"p_dev={dp:.4g}, q_dev={dq:.4g}"))
    for key in ("p_dev", "q_dev"):
        devs = [r[key] for r in records]
        verdicts.append(Verdict(f"{key} decreasing in k", all(b < a for a, b in zip(devs[:-1], devs[1:])),
                                "strict", ", ".join(f"{v:.4g}" for v in devs)))
    V = [intrinsic_volumes(b).tolist() for b in as_union(exp.index_set).bodies]
    res = ExperimentResult("geometry", exp.to_dict(), records, {"intrinsic_volumes": V, "L": L}, verdicts)
    run.write_result(res, "geometry")
    run.finish(config_digest(loaded.raw))
    sys.exit(_report([res]))


@main.command("tail-test")
@common
def tail_test(config_path, seed, replicates, out_dir, workers):
    """Ratio P(sup_B X > x) / rho((x, inf)) against the sup-integral functional."""
    loaded, exp = _load(config_path, seed, replicates)
    run = Run("tail-test", loaded.raw, out_dir, exp.seed)
    res = tail_ratio_experiment(exp, workers=workers)
    run.write_result(res, "tail_ratio")
    run.finish(config_digest(loaded.raw))
    sys.exit(_report([res]))


@main.command("evt-test")
@common
def evt_test(config_path, seed, replicates, out_dir, workers):
    """Fréchet limit of the normalized supremum (and perturbed variant if side fields are set)."""
    loaded, exp = _load(config_path, seed, replicates)
    run = Run("evt-test", loaded.raw, out_dir, exp.seed)
    results = [frechet_experiment(exp, workers=workers)]
    run.write_result(results[0], "frechet")
    if not exp.side_fields.is_zero and exp.mode == "kernel":
        results.append(perturbed_frechet_experiment(exp, workers=workers))
        run.write_result(results[1], "perturbed_frechet")
    run.finish(config_digest(loaded.raw))
    sys.exit(_report(results))


@main.command("oracle-test")
@common
def oracle_test(config_path, seed, replicates, out_dir, workers):
    """Largest-atom law against its closed form (no kernel)."""
    from dataclasses import replace

    loaded, exp = _load(config_path, seed, replicates)
    exp = replace(exp, mode="no_kernel")
    run = Run("oracle-test", loaded.raw, out_dir, exp.seed)
    res = frechet_experiment(exp, workers=workers)
    run.write_result(res, "oracle")
    run.finish(config_digest(loaded.raw))
    sys.exit(_report([res]))


@main.command("simulate")
@common
@click.option("--replicate-id", type=int, default=0, show_default=True)
def simulate(config_path, seed, replicates, out_dir, workers, replicate_id):
    """Dump one realization: atoms and field values on the grid over the index set."""
    loaded, exp = _load(config_path, seed, replicates)
    run = Run("simulate", loaded.raw, out_dir, exp.seed)
    _, C = exp.ladder()[-1]
    margin = default_margin(exp.kernel, exp.model.alpha, exp.margin_budget)
    step = loaded.raw.get("grid_step", exp.kernel.length_scale / 20.0)
    W = SimulationWindow(C, margin, grid_step=step, seed=exp.seed, replicate_id=replicate_id)
    F = simulate_heavy(W, exp.model, exp.kernel)
    y1, y2 = simulate_side_fields(W, exp.side_fields, exp.kernel)
    nodes = W.grid_nodes()
    vals = evaluate_field([F, y1, y2], nodes, abs_tol=1e-9)
    holder = field_holder([F, y1, y2])
    sup = grid_supremum(vals.values, step, exp.dim, holder)
    out = Path(out_dir)
    atoms_path, field_path = out / "atoms.csv", out / "field.csv"
    _atomic_csv(atoms_path, [f"u{i + 1}" for i in range(exp.dim)] + ["magnitude"],
                [loc + [m] for loc, m in zip(F.locations.tolist(), F.magnitudes.tolist())])
    _atomic_csv(field_path, [f"x{i + 1}" for i in range(exp.dim)] + ["value"],
                [p + [v] for p, v in zip(nodes.tolist(), vals.values.tolist())])
    summary = {"atoms": len(F), "grid_nodes": len(nodes), "sup_estimate": sup.sup_estimate,
               "upper_bound": sup.upper_bound, "evaluation_error_bound": vals.error_bound,
               "hoelder_bound_available": holder is not None, "window_volume": W.volume}
    payload = {"config": exp.to_dict(), "replicate_id": replicate_id, "summary": summary}
    atomic_write(out / "simulate.json", json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    run.outputs["simulate"] = {"json": str(out / "simulate.json"), "atoms": str(atoms_path),
                               "field": str(field_path)}
    run.finish(config_digest(loaded.raw))
    click.echo(json.dumps(_jsonable(summary)))
    sys.exit(0)


@main.command("validate")
@click.argument("config_path", type=click.Path(dir_okay=False))
def validate(config_path):
    """Cross-field checks without running anything."""
    try:
        loaded = load_config(config_path)
    except (ConfigError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    report = validate_config(loaded)
    click.echo(report.render())
    sys.exit(0 if report.ok else 2)


if __name__ == "__main__":
    main()
