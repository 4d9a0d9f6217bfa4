import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levyfield.geometry import (Ball, BodyUnion, Box, GeometryError, PConvexSet, Point, boundary_tube_bounds,
                                build_grid, count_limit_experiment, intrinsic_volumes, outer_parallel_weights,
                                steiner_volume, unit_ball_volume)


def dilated_box_volume(sides, r):
    """Core, face slabs, edge cylinders and corner ball pieces, summed by hand."""
    s = list(sides)
    if len(s) == 1:
        return s[0] + 2 * r
    if len(s) == 2:
        a, b = s
        return a * b + 2 * r * (a + b) + math.pi * r * r
    a, b, c = s
    return a * b * c + 2 * r * (a * b + b * c + c * a) + math.pi * r * r * (a + b + c) + 4 / 3 * math.pi * r**3


def test_steiner_random_boxes():
    rng = np.random.default_rng(3)
    for _ in range(100):
        d = int(rng.integers(1, 4))
        sides = rng.uniform(0.1, 10, d)
        r = rng.uniform(0, 5)
        box = Box(tuple(rng.normal(size=d)), tuple(sides))
        assert steiner_volume(box, r) == pytest.approx(dilated_box_volume(sides, r), rel=1e-12, abs=1e-9)


def test_intrinsic_volume_examples():
    np.testing.assert_allclose(intrinsic_volumes(Box((0, 0), (2, 2))), [1, 4, 4])
    r = 1.7
    np.testing.assert_allclose(intrinsic_volumes(Ball((0, 0), r)), [1, math.pi * r, math.pi * r * r])
    # 3-ball: V_1 = 4r (mean width times ... ), V_2 = 2 pi r^2 (half the surface area)
    np.testing.assert_allclose(intrinsic_volumes(Ball((0, 0, 0), 1.0)), [1, 4, 2 * math.pi, 4 / 3 * math.pi])
    np.testing.assert_allclose(intrinsic_volumes(Point((0.0, 0.0))), [1, 0, 0])


def test_disk_steiner_expansion():
    r, s = 1.3, 0.4
    assert steiner_volume(Ball((0, 0), r), s) == pytest.approx(math.pi * (r + s) ** 2)
    assert steiner_volume(Box((0, 0), (3.0, 3.0)), 0.0) == pytest.approx(9.0)
    assert steiner_volume(Box((0,), (2.5,)), 0.7) == pytest.approx(3.9)


@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=3), st.floats(0.1, 5))
def test_intrinsic_volume_homogeneity(sides, gamma):
    box = Box(tuple([0.0] * len(sides)), tuple(sides))
    V = intrinsic_volumes(box)
    Vg = intrinsic_volumes(box.scaled(gamma))
    np.testing.assert_allclose(Vg, V * gamma ** np.arange(len(sides) + 1), rtol=1e-12)
    assert V[0] == 1 and V[-1] == pytest.approx(box.volume)
    assert np.all(V >= 0)


@given(st.lists(st.tuples(st.floats(0.1, 10), st.floats(0, 5)), min_size=1, max_size=3))
def test_intrinsic_volume_monotone(pairs):
    small = Box(tuple([0.0] * len(pairs)), tuple(a for a, _ in pairs))
    big = Box(tuple([0.0] * len(pairs)), tuple(a + e for a, e in pairs))
    assert np.all(intrinsic_volumes(small) <= intrinsic_volumes(big) * (1 + 1e-12))


def test_outer_parallel_weights_are_steiner_derivative():
    box = Box((0, 0, 0), (1.0, 2.0, 3.0))
    w = outer_parallel_weights(box)
    r, h = 0.8, 1e-6
    deriv = (steiner_volume(box, r + h) - steiner_volume(box, r - h)) / (2 * h)
    assert sum(w[m] * r ** (m - 1) for m in range(1, 4)) == pytest.approx(deriv, rel=1e-8)


def test_boundary_tube_bounds():
    sq = Box((0, 0), (1.0, 1.0))
    tb = boundary_tube_bounds(sq, 0.1)
    assert tb.lower == pytest.approx(4 * 0.1 + math.pi * 0.01)
    assert tb.upper == pytest.approx(2 * tb.lower)
    # hit rate of the tube from 1e6 uniform samples in the bounding box
    rng = np.random.default_rng(4)
    u = rng.uniform(-0.2, 1.2, size=(1_000_000, 2))
    inside = np.all((u >= 0) & (u <= 1), axis=-1)
    d_out = sq.distance(u)
    d_in = np.min(np.concatenate([u, 1 - u], axis=1), axis=1)
    tube = np.where(inside, d_in <= 0.1, d_out <= 0.1)
    est = tube.mean() * 1.4**2
    exact = 4 * 0.1 + math.pi * 0.01 + (1 - 0.8**2)
    assert est == pytest.approx(exact, abs=5e-3)
    assert tb.lower <= est <= tb.upper
    small = boundary_tube_bounds(sq, 1e-9)
    assert small.upper < 1e-8


def test_pconvex_validation():
    with pytest.raises(GeometryError):
        PConvexSet([Box((0, 0), (1, 1)), Box((5, 5), (1, 1))])
    with pytest.raises(GeometryError):
        PConvexSet([Box((1, 1), (1, 1))])
    C = PConvexSet([Box((-1, -1), (2, 2)), Ball((1, 0), 1.0), Box((1.5, -0.5), (3, 1))])
    assert C.p == 3
    assert PConvexSet.from_dict(C.to_dict()) == C
    with pytest.raises(GeometryError):
        Box((0, 0), (1, 0))
    with pytest.raises(GeometryError):
        Ball((0, 0), -1.0)


def test_union_volume():
    boxes = PConvexSet([Box((-1, -1), (2, 2)), Box((0, 0), (2, 2))])
    assert boxes.volume == pytest.approx(7.0, abs=1e-12)
    mixed = BodyUnion([Ball((0, 0), 1.0), Ball((1, 0), 1.0)])
    # lens area of two unit disks at distance 1: 2 acos(1/2) - sqrt(3)/2
    lens = 2 * math.acos(0.5) - math.sqrt(3) / 2
    assert mixed.volume == pytest.approx(2 * math.pi - lens, rel=1e-4)


def test_relative_intrinsic_volumes_constant():
    C = PConvexSet([Box((-1, -1), (2, 2)), Ball((1, 0), 1.0)])
    ref = C.relative_intrinsic_volumes()
    for r in (2.0, 10.0, 100.0):
        np.testing.assert_allclose(C.scaled(r).relative_intrinsic_volumes(), ref, rtol=1e-6)


def test_grid_square_tiling():
    g = build_grid(Box((0, 0), (10, 10)), 4, 1)
    assert g.t == 5 and g.p == 4 and g.q == 4
    # t = L floor(sqrt(|C| / k)) = 3 * 3, giving k / L^d = 4 cells
    g = build_grid(Box((0, 0), (18, 18)), 36, 3)
    assert g.t == 9 and g.p == g.q == 4


def test_grid_degenerate():
    with pytest.raises(GeometryError):
        build_grid(Box((0, 0), (2, 2)), 5, 1)


def test_grid_disk_rasterization_oracle():
    disk = Ball((0.0, 0.0), 10.0)
    g = build_grid(disk, 25, 1)
    assert g.t == 3  # floor(sqrt(100 pi / 25))
    # pixel-centre rasterization at resolution 0.01
    inner = outer = 0
    ticks = (np.arange(300) + 0.5) * 0.01
    for zx in range(-4, 4):
        for zy in range(-4, 4):
            X, Y = np.meshgrid(zx * 3 + ticks, zy * 3 + ticks)
            hit = X**2 + Y**2 <= 100.0
            inner += bool(hit.all())
            outer += bool(hit.any())
    assert (g.p, g.q) == (inner, outer)
    assert g.p < 25 < g.q


def test_grid_sandwich():
    C = PConvexSet([Ball((0, 0), 1.0), Box((0, -0.3), (1.6, 0.6))]).scaled(30.0)
    g = build_grid(C, 50, 2)
    rng = np.random.default_rng(5)
    assert g.p <= 50 / 4 <= g.q
    # points in D_minus cells lie in C
    z = g.inner[rng.integers(g.p, size=100_000)]
    u = (z + rng.random(z.shape)) * g.t
    assert np.all(C.contains(u))
    # points of C lie in D_plus cells
    lo, hi = C.bounds()
    v = rng.uniform(lo, hi, size=(300_000, 2))
    v = v[np.asarray(C.contains(v))][:100_000]
    assert len(v) == 100_000
    assert np.all(g.cube_index(v, "plus"))
    # L-lattice points cover the inner cells
    pts = g.lattice_points("minus")
    assert len(pts) == g.p * (g.t // g.L) ** 2


def test_c_L_bounded():
    C = Ball((0.0, 0.0), 1.0)
    vals = [build_grid(C.scaled(r), 100, 1).c_L for r in (20, 40, 80, 160)]
    assert max(vals) < 1.5


def test_count_limit_square_exact():
    rows = count_limit_experiment(Box((0, 0), (1, 1)), [10, 20, 30, 40, 50], [100], L=1)
    assert rows[0].p_ratio_last == rows[0].q_ratio_last == 1.0


def test_count_limit_disk_trend():
    scal = [100 * m / math.sqrt(math.pi) for m in range(1, 18)]
    rows = count_limit_experiment(Ball((0, 0), 1.0), scal, [100, 1000, 10000], L=1)
    dev = [max(abs(r.p_ratio_last - 1), abs(r.q_ratio_last - 1)) for r in rows]
    assert all(b < a for a, b in zip(dev[:-1], dev[1:]))
    for r, d in zip(rows, dev):
        assert d <= 5 / math.sqrt(r.k)


def test_single_cube_grid():
    g = build_grid(Box((0, 0), (1, 1)), 1, 1)
    assert g.p <= 1 <= g.q


def test_unit_ball_volume():
    assert [unit_ball_volume(m) for m in range(4)] == pytest.approx([1, 2, math.pi, 4 / 3 * math.pi])
