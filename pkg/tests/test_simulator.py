import math

import numpy as np
import pytest
from scipy import stats

from levyfield.extremes import ExperimentConfig, dominant_atom_share, margin_sufficiency_check, simulate_suprema
from levyfield.geometry import Ball, Box, PConvexSet, Point
from levyfield.kernels import Kernel
from levyfield.regvar import NegativePart, TailModel, UnsupportedModelError, tail_mass
from levyfield.simulator import (STREAM_LIGHT, JumpField, SideFieldSpec, SimulationWindow, certified_supremum,
                                 default_delta, evaluate_field, field_holder, grid_supremum, lattice_sum_bound,
                                 replicate_rng, run_replicates, simulate_heavy, simulate_heavy_series,
                                 simulate_series_light, simulate_side_fields, small_jump_mean)

PARETO1 = TailModel("pareto", 1.0)
G1 = Kernel("gaussian", 1)
G2 = Kernel("gaussian", 2)


def poisson_chisquare(counts, mean):
    """Chi-square goodness of fit of integer counts to Poisson(mean), bins merged to expected >= 5."""
    n = len(counts)
    kmax = int(max(counts.max(), stats.poisson.ppf(1 - 1e-9, mean)))
    probs = stats.poisson.pmf(np.arange(kmax + 1), mean)
    probs[-1] += stats.poisson.sf(kmax, mean)
    obs = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1).astype(float)
    exp_ = probs * n
    o, e, acc_o, acc_e = [], [], 0.0, 0.0
    for oi, ei in zip(obs, exp_):
        acc_o += oi
        acc_e += ei
        if acc_e >= 5:
            o.append(acc_o)
            e.append(acc_e)
            acc_o = acc_e = 0.0
    o[-1] += acc_o
    e[-1] += acc_e
    return stats.chisquare(o, e).pvalue


def heavy_counts(n_rep, levels, seed=0):
    W0 = SimulationWindow(Box((0.0,), (50.0,)), 0.0, seed=seed)
    out = np.zeros((n_rep, len(levels)), dtype=int)
    for i in range(n_rep):
        F = simulate_heavy(SimulationWindow(W0.target, 0.0, seed=seed, replicate_id=i), PARETO1, G1)
        out[i] = [(F.magnitudes > x).sum() for x in levels]
    return out


def test_heavy_poisson_counts():
    levels = [1, 2, 5, 10]
    counts = heavy_counts(2000, levels, seed=1)
    for j, x in enumerate(levels):
        mean = 50 * tail_mass(PARETO1, x)
        assert abs(counts[:, j].mean() - mean) < 3 * math.sqrt(mean / 2000)
        assert poisson_chisquare(counts[:, j], mean) > 0.01


def test_heavy_negative_jumps():
    m = TailModel("pareto", 1.0, negative_part=NegativePart(0.4, 10.0))
    W = SimulationWindow(Box((0.0,), (100.0,)), 0.0, seed=2)
    neg = [np.sum(simulate_heavy(SimulationWindow(W.target, 0.0, seed=2, replicate_id=i), m, G1).magnitudes < 0)
           for i in range(500)]
    assert np.mean(neg) == pytest.approx(40.0, abs=3 * math.sqrt(40 / 500))


def test_heavy_series_matches_direct():
    W = SimulationWindow(Box((0.0,), (50.0,)), 0.0)
    direct, series = [], []
    for i in range(1000):
        w = SimulationWindow(W.target, 0.0, seed=3, replicate_id=i)
        direct.append(simulate_heavy(w, PARETO1, G1).magnitudes)
        F = simulate_heavy_series(w, PARETO1, G1)
        assert np.all(np.diff(F.magnitudes) <= 0)
        series.append(F.magnitudes)
    nd = np.array([len(m) for m in direct])
    ns = np.array([len(m) for m in series])
    assert stats.ttest_ind(nd, ns).pvalue > 0.001
    assert stats.ks_2samp(np.concatenate(direct), np.concatenate(series)).pvalue > 0.001
    mx_d = np.array([m.max() for m in direct])
    mx_s = np.array([m.max() for m in series])
    assert stats.ks_2samp(mx_d, mx_s).pvalue > 0.001


def test_series_light():
    m = TailModel("stable", 0.5)
    W = SimulationWindow(Box((0.0,), (10.0,)), 0.0)
    counts = []
    for i in range(300):
        F = simulate_series_light(SimulationWindow(W.target, 0.0, seed=4, replicate_id=i), m, G1, 1e-4)
        assert np.all(np.diff(F.magnitudes) <= 0)
        assert np.all((F.magnitudes > 1e-4 * (1 - 1e-12)) & (F.magnitudes <= 1.0))
        counts.append(len(F))
    assert np.mean(counts) == pytest.approx(1980.0, abs=3 * math.sqrt(1980 / 300))
    assert F.truncation_bias_bound == pytest.approx(10 * small_jump_mean(m, 1e-4))

    empty = simulate_series_light(W, m, G1, 1.0)
    assert len(empty) == 0 and empty.truncation_bias_bound == pytest.approx(20.0)
    pareto = simulate_series_light(W, PARETO1, G1, 0.01)
    assert len(pareto) == 0 and pareto.truncation_bias_bound == 0.0
    with pytest.raises(UnsupportedModelError):
        simulate_series_light(W, TailModel("stable", 1.5), G1, 0.1)


def test_default_delta():
    m = TailModel("stable", 0.5)
    d = default_delta(m, 100.0, 50.0)
    assert 100.0 * small_jump_mean(m, d) <= 0.01 * 50.0 * (1 + 1e-9)
    assert default_delta(PARETO1, 100.0, 50.0) == 1.0


def test_evaluate_field_basics():
    F = JumpField(np.array([[0.3, -0.2]]), np.array([2.5]), G2)
    P = np.random.default_rng(0).normal(size=(50, 2))
    np.testing.assert_allclose(evaluate_field(F, P).values, 2.5 * np.exp(-np.sum((P - [0.3, -0.2]) ** 2, 1)),
                               rtol=1e-14)
    assert np.all(evaluate_field(JumpField.empty(G2), P).values == 0)


def test_evaluate_superposition_and_pruning():
    rng = np.random.default_rng(1)
    A = JumpField(rng.uniform(0, 20, (400, 2)), 1 / rng.random(400), G2)
    B = JumpField(rng.uniform(0, 20, (300, 2)), rng.normal(size=300), G2)
    P = rng.uniform(0, 20, (5000, 2))
    sep = evaluate_field(A, P).values + evaluate_field(B, P).values
    np.testing.assert_allclose(evaluate_field(A + B, P).values, sep, rtol=0, atol=1e-12)
    pruned = evaluate_field([A, B], P, abs_tol=1e-8, dense_limit=1e3)
    assert pruned.error_bound == pytest.approx(1e-8)
    assert np.max(np.abs(pruned.values - sep)) <= pruned.error_bound


def test_grid_supremum_examples():
    est = grid_supremum(np.full(10, 3.0), 0.1, 2, None)
    assert est.sup_estimate == 3.0 and est.upper_bound is None
    u0 = np.array([0.123, 0.457])
    F = JumpField(u0[None], np.array([1.0]), G2)
    h = 0.01
    W = SimulationWindow(Box((0, 0), (1, 1)), 0.0, grid_step=h)
    nodes = W.grid_nodes()
    est = grid_supremum(evaluate_field(F, nodes).values, h, 2, field_holder(F))
    C_H = G2.holder()[0]
    assert 1.0 - est.sup_estimate <= C_H * h * math.sqrt(2) / 2
    assert est.sup_estimate <= 1.0 <= est.upper_bound
    coarse = grid_supremum(evaluate_field(F, W.grid_nodes(0.02)).values, 0.02, 2)
    assert coarse.sup_estimate <= est.sup_estimate


def test_grid_covers_target():
    W = SimulationWindow(Ball((0.0, 0.0), 3.0), 1.0, grid_step=0.1)
    nodes = W.grid_nodes()
    probe = np.random.default_rng(2).uniform(-3, 3, (20_000, 2))
    probe = probe[np.linalg.norm(probe, axis=1) <= 3.0]
    from scipy.spatial import cKDTree
    dist, _ = cKDTree(nodes).query(probe)
    assert dist.max() <= 0.1 * math.sqrt(2) / 2 + 0.05  # rim nodes sit inside the ball


@pytest.mark.parametrize("target", [Box((0.0, 0.0), (8.0, 5.0)), Ball((0.0, 0.0), 4.0),
                                    PConvexSet([Box((-2, -2), (4, 4)), Ball((3, 0), 2.0)])])
def test_certified_supremum_brackets_dense_grid(target):
    rng = np.random.default_rng(5)
    for rep in range(5):
        W = SimulationWindow(target, 4.0, seed=5, replicate_id=rep)
        F = simulate_heavy(W, PARETO1, G2)
        Y = JumpField(rng.uniform(W.lo, W.hi, (200, 2)), rng.normal(size=200), G2)
        cs = certified_supremum([F, Y], target, rtol=1e-6)
        nodes = W.grid_nodes(0.02)
        dense = evaluate_field([F, Y], nodes).values.max()
        assert cs.lower <= cs.upper
        assert dense <= cs.upper + 1e-9
        assert cs.lower >= dense - G2.holder()[0] * np.abs(F.magnitudes).sum() * 0.02
        assert bool(target.contains(cs.argmax)[0]) if hasattr(target, "contains") else True


def test_certified_supremum_point_and_empty():
    F = JumpField(np.array([[1.0]]), np.array([3.0]), G1)
    cs = certified_supremum(F, Point((0.0,)))
    assert cs.lower == cs.upper == pytest.approx(3 * math.exp(-1))
    assert certified_supremum(JumpField.empty(G1), Box((0.0,), (1.0,))).upper == 0.0


def test_determinism_bit_identical():
    W = SimulationWindow(Box((0.0, 0.0), (10.0, 10.0)), 3.0, seed=99, replicate_id=7)
    a, b = simulate_heavy(W, PARETO1, G2), simulate_heavy(W, PARETO1, G2)
    assert np.array_equal(a.locations, b.locations) and np.array_equal(a.magnitudes, b.magnitudes)
    s1 = certified_supremum(a, W.target)
    s2 = certified_supremum(b, W.target)
    assert s1.lower == s2.lower and s1.upper == s2.upper
    c = simulate_heavy(SimulationWindow(W.target, 3.0, seed=99, replicate_id=8), PARETO1, G2)
    assert not np.array_equal(a.magnitudes[:5], c.magnitudes[:5])
    assert replicate_rng(1, 2, STREAM_LIGHT).random() == replicate_rng(1, 2, STREAM_LIGHT).random()


def _ids_square(ids):
    return [int(i) ** 2 for i in ids]


def test_run_replicates_order(monkeypatch):
    one = run_replicates(_ids_square, 23, workers=1, chunk_size=5)
    monkeypatch.setenv("LEVYFIELD_WORKERS", "2")
    two = run_replicates(_ids_square, 23, workers=4, chunk_size=4)
    assert one == two == [i * i for i in range(23)]


def test_suprema_identical_across_worker_counts(monkeypatch):
    cfg = ExperimentConfig(PARETO1, G2, Box((0.0, 0.0), (5.0, 5.0)), replicates=100, seed=5)
    a = simulate_suprema(cfg, cfg.index_set, 12, workers=1)
    monkeypatch.setenv("LEVYFIELD_WORKERS", "2")
    b = simulate_suprema(cfg, cfg.index_set, 12, workers=2)
    assert np.array_equal(a, b)


def test_side_fields():
    W = SimulationWindow(Box((0.0, 0.0), (10.0, 10.0)), 3.0, seed=3)
    y1, y2 = simulate_side_fields(W, SideFieldSpec("bounded", "gaussian"), G2)
    nodes = W.grid_nodes(0.05)
    assert np.max(np.abs(evaluate_field(y1, nodes).values)) <= 1.0
    assert len(y2) > 0
    z1, z2 = simulate_side_fields(W, SideFieldSpec(), G2)
    assert len(z1) == len(z2) == 0
    p1, _ = simulate_side_fields(W, SideFieldSpec("poisson"), G2)
    assert abs(len(p1) - W.volume) < 5 * math.sqrt(W.volume)
    with pytest.raises(ValueError):
        SideFieldSpec("uniform")


def test_lattice_sum_bound():
    b = lattice_sum_bound(G2)
    v = np.random.default_rng(0).random((2000, 2))
    z = np.stack(np.meshgrid(np.arange(-8, 9), np.arange(-8, 9)), -1).reshape(-1, 2)
    sums = G2(v[:, None, :] - z[None, :, :]).sum(axis=1)
    assert sums.max() <= b


def test_gaussian_side_field_sup_stable():
    vals = []
    for rid in range(2000):
        W = SimulationWindow(Box((0.0, 0.0), (1.0, 1.0)), 4.0, seed=8, replicate_id=rid)
        _, y2 = simulate_side_fields(W, SideFieldSpec(y2="gaussian"), G2)
        vals.append(evaluate_field(y2, W.grid_nodes(0.1)).values.max())
    vals = np.asarray(vals)
    assert np.all(np.isfinite(vals))
    # batch means of 40 are homogeneous (dispersion test at the 1% level) and uncorrelated in id
    batches = vals.reshape(50, 40)
    se = vals.std(ddof=1) / math.sqrt(40)
    dispersion = np.sum(((batches.mean(axis=1) - vals.mean()) / se) ** 2)
    assert 0.01 < stats.chi2.sf(dispersion, 49) < 0.99
    assert abs(np.corrcoef(vals[:-1], vals[1:])[0, 1]) < 3 / math.sqrt(len(vals))


def test_window_margin_sufficiency():
    cfg = ExperimentConfig(PARETO1, G2, Box((0.0, 0.0), (10.0, 10.0)), replicates=100, seed=12)
    rel = margin_sufficiency_check(cfg, cfg.index_set, 100)
    assert np.all(rel <= 1e-3)


def test_single_jump_dominance():
    cfg = ExperimentConfig(PARETO1, G1, Point((0.0,)), replicates=20_000, seed=21)
    sups = simulate_suprema(cfg, cfg.index_set, cfg.replicates)
    top = np.argsort(-sups[:, 0])[:20]
    from levyfield.simulator import default_margin
    margin = default_margin(G1, 1.0, cfg.margin_budget)
    shares = []
    for rid in top:
        W = SimulationWindow(cfg.index_set, margin, seed=cfg.seed, replicate_id=int(rid))
        shares.append(dominant_atom_share(simulate_heavy(W, PARETO1, G1), [0.0]))
    assert np.mean(np.array(shares) >= 0.9) >= 0.8
