"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Criteria 6-8 are full-size Monte Carlo runs (minutes each on one core).
"""
import itertools
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from levyfield.config import build_experiment, load_config
from levyfield.extremes import frechet_experiment, perturbed_frechet_experiment, tail_ratio_experiment
from levyfield.geometry import Ball, Box, count_limit_experiment, intrinsic_volumes, steiner_volume
from levyfield.kernels import Kernel
from levyfield.regvar import TailModel, norming_constant, tail_mass
from levyfield.simulator import SimulationWindow, simulate_heavy

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    return emit


def experiment(name):
    return build_experiment(load_config(CONFIGS / name))


def dilation_by_faces(sides, r):
    """Volume of a box dilated by a ball, one term per face of the box.

    A face spanned by the axes in ``S`` contributes its area times the
    volume of a ``(d - |S|)``-ball of radius ``r``.
    """
    d = len(sides)
    total = 0.0
    for k in range(d + 1):
        m = d - k
        ball = math.pi ** (m / 2) / math.gamma(m / 2 + 1) * r**m
        for S in itertools.combinations(range(d), k):
            total += math.prod(sides[i] for i in S) * ball
    return total


def test_criterion_1_exact_geometry(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 4))
        sides = rng.uniform(0.1, 10.0, d)
        r = float(rng.uniform(0.0, 5.0))
        worst = max(worst, abs(steiner_volume(Box(tuple(rng.normal(size=d)), tuple(sides)), r)
                               - dilation_by_faces(sides, r)))
        R = float(rng.uniform(0.1, 5.0))
        ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * (R + r) ** d
        worst = max(worst, abs(steiner_volume(Ball(tuple([0.0] * d), R), r) - ball))
    V = intrinsic_volumes(Box((0.0, 0.0), (2.0, 2.0)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and np.allclose(V, [1, 4, 4], rtol=0, atol=1e-12) and elapsed < 1.0
    report(1, ok, f"max |steiner - decomposition| = {worst:.2e} (<= 1e-9), V(square 2) = {V.tolist()}, "
                  f"{elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_2_grid_count_limit(report):
    t0 = time.perf_counter()
    raw = load_config(CONFIGS / "geometry_disk.yaml").raw["geometry"]
    assert max(raw["scalings"]) <= 1e3
    rows = count_limit_experiment(Ball((0.0, 0.0), 1.0), raw["scalings"], raw["k_list"], raw["L"])
    elapsed = time.perf_counter() - t0
    dp = [abs(r.p_ratio_last - 1) for r in rows]
    dq = [abs(r.q_ratio_last - 1) for r in rows]
    within = all(a <= 5 / math.sqrt(r.k) and b <= 5 / math.sqrt(r.k) for r, a, b in zip(rows, dp, dq))
    mono = all(b < a for a, b in zip(dp[:-1], dp[1:])) and all(b < a for a, b in zip(dq[:-1], dq[1:]))
    ok = within and mono and elapsed < 60
    report(2, ok, "k=" + ",".join(str(r.k) for r in rows) + " p_dev=" + ",".join(f"{v:.4g}" for v in dp)
           + " q_dev=" + ",".join(f"{v:.4g}" for v in dq) + f" (<= 5/sqrt(k), decreasing), {elapsed:.1f}s")
    assert ok


def test_criterion_3_norming_constants(report):
    m = TailModel("pareto", 2.0)
    a = norming_constant(m, 100.0)
    errs = [abs(100.0 * tail_mass(m, a * x) - x**-2.0) for x in (0.5, 1.0, 2.0)]
    ok = a == 10.0 and max(errs) <= 1e-9
    report(3, ok, f"a = {a!r} (exactly 10), max |volume*tail(a x) - x^-2| = {max(errs):.1e} (<= 1e-9)")
    assert ok


def poisson_chisquare_pvalue(counts, mean):
    kmax = int(max(counts.max(), stats.poisson.ppf(1 - 1e-9, mean)))
    probs = stats.poisson.pmf(np.arange(kmax + 1), mean)
    probs[-1] += stats.poisson.sf(kmax, mean)
    obs = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1).astype(float)
    o, e, acc_o, acc_e = [], [], 0.0, 0.0
    for oi, ei in zip(obs, probs * len(counts)):
        acc_o, acc_e = acc_o + oi, acc_e + ei
        if acc_e >= 5:
            o.append(acc_o)
            e.append(acc_e)
            acc_o = acc_e = 0.0
    o[-1] += acc_o
    e[-1] += acc_e
    return float(stats.chisquare(o, e).pvalue)


def test_criterion_4_poisson_atom_law(report):
    t0 = time.perf_counter()
    model, kernel = TailModel("pareto", 1.0), Kernel("gaussian", 1)
    levels = [1.0, 2.0, 5.0, 10.0]
    target = Box((0.0,), (50.0,))
    counts = np.zeros((10_000, len(levels)), dtype=int)
    for i in range(len(counts)):
        F = simulate_heavy(SimulationWindow(target, 0.0, seed=404, replicate_id=i), model, kernel)
        counts[i] = [(F.magnitudes > x).sum() for x in levels]
    means = [50.0 * tail_mass(model, x) for x in levels]
    pvals = [poisson_chisquare_pvalue(counts[:, j], mu) for j, mu in enumerate(means)]
    elapsed = time.perf_counter() - t0
    ok = np.allclose(means, [50, 25, 10, 5]) and min(pvals) > 0.01 and elapsed < 60
    report(4, ok, "chi-square p = " + ", ".join(f"{p:.3f}" for p in pvals) + f" (> 0.01), {elapsed:.1f}s")
    assert ok


def test_criterion_5_exact_law_oracle(report):
    cfg = experiment("oracle_poisson_max.yaml")
    assert cfg.mode == "no_kernel" and cfg.replicates == 10_000
    res = frechet_experiment(cfg)
    last = [r for r in res.records if r["volume"] == max(cfg.volumes)]
    worst = max(abs(r["deviation"]) for r in last)
    ok = res.passed and res.runtime_s < 300
    report(5, ok, f"3-SE exact law at all n: {all(r['within_sigmas'] for r in res.records)}, "
                  f"max |ECDF - Frechet| at 1e4 = {worst:.4f} (<= 0.01), {res.runtime_s:.0f}s")
    assert ok


def test_criterion_6_tail_ratio(report):
    cfg = experiment("tail_gaussian_point.yaml")
    assert cfg.replicates == 200_000
    res = tail_ratio_experiment(cfg)
    target = res.summary["target"]
    parts = [f"p={r['exceedance_level']:.3g}: {r['ratio']:.3f} [{r['ci_low']:.3f}, {r['ci_high']:.3f}]"
             for r in res.records]
    slope = res.summary.get("unperturbed_slope", {})
    ok = res.passed and res.runtime_s < 600
    report(6, ok, f"target sqrt(pi)={target:.4f}; " + "; ".join(parts)
           + f"; slope p={slope.get('p_value', float('nan')):.3g} (> 0.05), {res.runtime_s:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def frechet_run():
    cfg = experiment("frechet_gaussian_squares.yaml")
    assert cfg.replicates == 2000 and not cfg.side_fields.is_zero
    # the unperturbed sup in each replicate is the one the plain experiment draws
    return cfg, perturbed_frechet_experiment(cfg)


def test_criterion_7_frechet_limit(report, frechet_run):
    cfg, res = frechet_run
    ks = res.summary["ks_unperturbed"]
    dec = all(b < a for a, b in zip(ks[:-1], ks[1:]))
    ok = dec and ks[-1] <= 0.05
    report(7, ok, "KS = " + ", ".join(f"{v:.4f}" for v in ks)
           + f" (strictly decreasing, last <= 0.05), {res.runtime_s:.0f}s on 1 core incl. perturbed field")
    assert ok


def test_criterion_8_perturbation_invariance(report, frechet_run):
    cfg, res = frechet_run
    last = [r for r in res.records if r["n"] == len(cfg.volumes) - 1]
    ok = all(r["zero_inside"] for r in last)
    report(8, ok, "; ".join(f"x={r['x']:g}: {r['difference']:+.4f} [{r['ci_low']:+.4f}, {r['ci_high']:+.4f}]"
                            for r in last) + " (95% paired intervals contain 0)")
    assert ok


PROPERTY_SUITES = [
    "tests/test_regvar.py::test_quantile_inverts_tail",
    "tests/test_regvar.py::test_karamata_pareto_standard_grid",
    "tests/test_kernels.py::test_truncation_monotone",
    "tests/test_geometry.py::test_grid_sandwich",
    "tests/test_simulator.py::test_determinism_bit_identical",
    "tests/test_cli.py::test_rerun_byte_identical",
    "tests/test_simulator.py::test_window_margin_sufficiency",
]


def test_criterion_9_property_suites(report):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_SUITES],
                          cwd=ROOT, capture_output=True, text=True)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0
    report(9, ok, f"{len(PROPERTY_SUITES)} property suites: {summary}")
    assert ok, proc.stdout[-3000:]
