"""Atom-based simulation of the moving-average field and its suprema.

The field on a bounded window is realised as a finite sum of kernel bumps
``X(v) = sum_i y_i f(v - u_i)``. Jumps above 1 are a compound Poisson
process; jumps in ``(delta, 1]`` come from the Poisson-arrival series and are
only available for finite-variation models.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree

from .geometry import Point, as_union
from .kernels import Kernel, tail_radius
from .regvar import TailModel, UnsupportedModelError, small_jump_mean, tail_mass, tail_quantile

WORKERS_ENV = "LEVYFIELD_WORKERS"

# substream labels within a replicate
STREAM_HEAVY, STREAM_LIGHT, STREAM_Y1, STREAM_Y2, STREAM_SHELL = range(5)


def replicate_rng(seed: int, replicate_id: int, stream: int = 0) -> np.random.Generator:
    """Independent generator keyed by ``(seed, replicate_id, stream)``."""
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=(int(replicate_id), int(stream)))
    return np.random.default_rng(ss)


def worker_count(requested: Optional[int] = None) -> int:
    cap = os.environ.get(WORKERS_ENV)
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_replicates(task: Callable, n_replicates: int, workers: Optional[int] = None,
                   chunk_size: int = 256) -> list:
    """Evaluate ``task(ids)`` over replicate-id chunks; results ordered by id.

    ``task`` must be picklable (a module-level function or ``functools.partial``)
    and return one result per id.
    """
    chunks = [np.arange(s, min(s + chunk_size, n_replicates)) for s in range(0, n_replicates, chunk_size)]
    n = worker_count(workers)
    if n == 1 or len(chunks) == 1:
        parts = [task(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            parts = list(pool.map(task, chunks))
    out = []
    for p in parts:
        out.extend(p)
    return out


@dataclass(frozen=True)
class SimulationWindow:
    """Box window ``bbox(target) + [-margin, margin]^d`` around the index set.

    The box contains ``target + B(margin)``.
    """

    target: object
    margin: float
    grid_step: float = 0.05
    seed: int = 0
    replicate_id: int = 0

    @property
    def dim(self) -> int:
        return as_union(self.target).dim

    @property
    def lo(self) -> np.ndarray:
        return as_union(self.target).bounds()[0] - self.margin

    @property
    def hi(self) -> np.ndarray:
        return as_union(self.target).bounds()[1] + self.margin

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def rng(self, stream: int = STREAM_HEAVY) -> np.random.Generator:
        return replicate_rng(self.seed, self.replicate_id, stream)

    def with_margin(self, margin: float) -> "SimulationWindow":
        return replace(self, margin=margin)

    def grid_nodes(self, step: Optional[float] = None) -> np.ndarray:
        """Nodes of a regular grid (spacing at most ``step``) lying in the target."""
        h = step or self.grid_step
        U = as_union(self.target)
        lo, hi = U.bounds()
        axes = [np.linspace(a, b, max(1, int(math.ceil((b - a) / h - 1e-9))) + 1) if b > a else np.array([a])
                for a, b in zip(lo, hi)]
        P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        return P[U.contains(P)]


def default_margin(kernel: Kernel, alpha: float, budget: float = 1e-6) -> float:
    """Window margin: ``tail_radius`` of ``g**alpha`` at the neglect budget.

    ``int_{|u|>R} g**alpha`` bounds the expected number of atoms outside the
    window whose contribution at the target exceeds a level ``x``, in units
    of ``rho((x, inf))``.
    """
    return tail_radius(kernel, alpha, budget)


@dataclass
class JumpField:
    locations: np.ndarray
    magnitudes: np.ndarray
    kernel: Kernel
    truncation_bias_bound: float = 0.0

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, self.kernel.dimension)
        self.magnitudes = np.asarray(self.magnitudes, dtype=float).ravel()

    def __len__(self):
        return len(self.magnitudes)

    @classmethod
    def empty(cls, kernel: Kernel) -> "JumpField":
        return cls(np.zeros((0, kernel.dimension)), np.zeros(0), kernel)

    def __add__(self, other: "JumpField") -> "JumpField":
        if other.kernel != self.kernel:
            raise ValueError("cannot merge fields with different kernels")
        return JumpField(np.concatenate([self.locations, other.locations]),
                         np.concatenate([self.magnitudes, other.magnitudes]), self.kernel,
                         self.truncation_bias_bound + other.truncation_bias_bound)

    def restricted(self, mask) -> "JumpField":
        return JumpField(self.locations[mask], self.magnitudes[mask], self.kernel, self.truncation_bias_bound)

    def to_csv(self, path) -> None:
        d = self.kernel.dimension
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"u{i + 1}" for i in range(d)] + ["magnitude"])
            for loc, m in zip(self.locations.tolist(), self.magnitudes.tolist()):
                w.writerow(loc + [m])


def _uniform_in_box(rng, n, lo, hi):
    return lo + (hi - lo) * rng.random((n, len(lo)))


def simulate_heavy(window: SimulationWindow, model: TailModel, kernel: Kernel,
                   rng: Optional[np.random.Generator] = None) -> JumpField:
    """Compound Poisson jumps above 1 (plus negative jumps below -1 if configured)."""
    rng = rng if rng is not None else window.rng(STREAM_HEAVY)
    vol = window.volume
    rho_one = model.rho_one
    n = rng.poisson(vol * rho_one)
    locs = _uniform_in_box(rng, n, window.lo, window.hi)
    # U in (0, 1]
    mags = np.asarray(tail_quantile(model, (1.0 - rng.random(n)) * rho_one)) if n else np.zeros(0)
    neg = model.negative_part
    if neg is not None:
        m = rng.poisson(vol * neg.mass)
        locs = np.concatenate([locs, _uniform_in_box(rng, m, window.lo, window.hi)])
        mags = np.concatenate([mags, -((1.0 - rng.random(m)) ** (-1.0 / neg.index))])
    return JumpField(locs, mags, kernel)


def simulate_heavy_shell(inner: SimulationWindow, outer: SimulationWindow, model: TailModel,
                         kernel: Kernel, rng: Optional[np.random.Generator] = None) -> JumpField:
    """Jumps above 1 in ``outer`` minus ``inner`` (both box windows, nested).

    Together with ``simulate_heavy(inner)`` this realises the field on the
    larger window with the inner atoms held fixed.
    """
    rng = rng if rng is not None else outer.rng(STREAM_SHELL)
    vol = outer.volume - inner.volume
    n = rng.poisson(vol * model.rho_one)
    locs = np.zeros((0, kernel.dimension))
    while len(locs) < n:
        cand = _uniform_in_box(rng, 2 * (n - len(locs)) + 8, outer.lo, outer.hi)
        keep = ~np.all((cand >= inner.lo) & (cand <= inner.hi), axis=-1)
        locs = np.concatenate([locs, cand[keep]])
    locs = locs[:n]
    mags = np.asarray(tail_quantile(model, (1.0 - rng.random(n)) * model.rho_one)) if n else np.zeros(0)
    return JumpField(locs, mags, kernel)


def poisson_arrivals(rng: np.random.Generator, horizon: float) -> np.ndarray:
    """Standard Poisson arrivals ``Gamma_1 < Gamma_2 < ...`` below ``horizon``."""
    out = []
    last = 0.0
    batch = max(16, int(horizon + 4.0 * math.sqrt(horizon + 1.0)))
    while True:
        g = last + np.cumsum(rng.exponential(1.0, batch))
        below = g[g < horizon]
        out.append(below)
        if len(below) < batch:
            break
        last = g[-1]
    return np.concatenate(out)


def simulate_heavy_series(window: SimulationWindow, model: TailModel, kernel: Kernel,
                          rng: Optional[np.random.Generator] = None) -> JumpField:
    """Jumps above 1 from the series ``G(Gamma_n) = tail_quantile(Gamma_n / |W|)``.

    Same law as ``simulate_heavy``; magnitudes come out nonincreasing.
    """
    rng = rng if rng is not None else window.rng(STREAM_HEAVY)
    vol = window.volume
    gam = poisson_arrivals(rng, vol * model.rho_one)
    mags = np.asarray(tail_quantile(model, gam / vol)) if len(gam) else np.zeros(0)
    mags = np.maximum(mags, 1.0)
    locs = _uniform_in_box(rng, len(gam), window.lo, window.hi)
    return JumpField(locs, mags, kernel)


def simulate_series_light(window: SimulationWindow, model: TailModel, kernel: Kernel,
                          delta: float, rng: Optional[np.random.Generator] = None) -> JumpField:
    """Jumps with magnitude in ``(delta, 1]`` from the Poisson-arrival series.

    Magnitudes are the generalized inverse of the restricted tail,
    ``tail_quantile(rho_one + Gamma_n / |W|)``, and are nonincreasing in
    ``n``. Jumps at or below ``delta`` are dropped;
    ``truncation_bias_bound = |W| * small_jump_mean(delta)`` bounds the mean
    of the dropped contribution at any point.
    """
    if not model.finite_variation:
        raise UnsupportedModelError("light-part simulation needs a finite-variation model")
    rng = rng if rng is not None else window.rng(STREAM_LIGHT)
    vol = window.volume
    bias = vol * small_jump_mean(model, delta)
    mass = tail_mass(model, delta) - model.rho_one if delta < 1 else 0.0
    if mass <= 0:
        return JumpField(np.zeros((0, kernel.dimension)), np.zeros(0), kernel, bias)
    gam = poisson_arrivals(rng, vol * mass)
    mags = np.asarray(tail_quantile(model, model.rho_one + gam / vol)) if len(gam) else np.zeros(0)
    mags = np.clip(mags, delta, 1.0)
    locs = _uniform_in_box(rng, len(gam), window.lo, window.hi)
    return JumpField(locs, mags, kernel, bias)


def default_delta(model: TailModel, window_volume: float, smallest_level: float,
                  fraction: float = 0.01) -> float:
    """Cutoff making ``|W| * small_jump_mean(delta) <= fraction * smallest_level``."""
    if model.family == "pareto":
        return 1.0
    target = fraction * smallest_level / window_volume
    lo, hi = 1e-300, 1.0
    if small_jump_mean(model, hi) <= target:
        return 1.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if small_jump_mean(model, mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# side fields


@dataclass(frozen=True)
class SideFieldSpec:
    """Perturbation fields added to ``X``.

    ``y1``: ``"zero"``, ``"bounded"`` (lattice field with ``|Y1| <= bound``)
    or ``"poisson"`` (unit-rate Poisson atoms, marks uniform on ``[-bound, bound]``).
    ``y2``: ``"zero"`` or ``"gaussian"`` (lattice field with N(0, scale^2) marks).
    Lattice fields use a uniformly shifted integer lattice, which keeps them
    stationary; the kernel is that of ``X``.
    """

    y1: str = "zero"
    y2: str = "zero"
    bound: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.y1 not in ("zero", "bounded", "poisson"):
            raise ValueError(f"unknown Y1 kind {self.y1!r}")
        if self.y2 not in ("zero", "gaussian"):
            raise ValueError(f"unknown Y2 kind {self.y2!r}")

    @property
    def is_zero(self) -> bool:
        return self.y1 == "zero" and self.y2 == "zero"


def lattice_sum_bound(kernel: Kernel) -> float:
    """Upper bound on ``sup_v sum_{z in Z^d} f(v - z)``."""
    d = kernel.dimension
    rc = kernel.cutoff_radius(1e-16) + 1.0
    n = int(math.ceil(rc)) + 1
    z = np.stack(np.meshgrid(*[np.arange(-n, n + 1)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    # distance from lattice point to the unit cell [0, 1]^d bounds |v - z| from below
    gap = np.maximum(-z, 0) + np.maximum(z - 1, 0)
    dist = np.sqrt(np.sum(gap * gap, axis=-1))
    total = float(np.sum(kernel.envelope(dist)))
    return total * (1.0 + 1e-9) + 1e-12


def _lattice_locations(rng, lo, hi):
    shift = rng.random(len(lo))
    axes = [np.arange(math.floor(a - s), math.ceil(b - s) + 1) + s for a, b, s in zip(lo, hi, shift)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    return P[np.all((P >= lo) & (P <= hi), axis=-1)]


def simulate_side_fields(window: SimulationWindow, spec: SideFieldSpec, kernel: Kernel):
    """Return ``(Y1, Y2)`` as atom fields on the window (empty when zero)."""
    y1 = JumpField.empty(kernel)
    y2 = JumpField.empty(kernel)
    if spec.y1 == "bounded":
        rng = window.rng(STREAM_Y1)
        locs = _lattice_locations(rng, window.lo, window.hi)
        c = spec.bound / lattice_sum_bound(kernel)
        y1 = JumpField(locs, c * rng.uniform(-1.0, 1.0, len(locs)), kernel)
    elif spec.y1 == "poisson":
        rng = window.rng(STREAM_Y1)
        n = rng.poisson(window.volume)
        y1 = JumpField(_uniform_in_box(rng, n, window.lo, window.hi),
                       spec.bound * rng.uniform(-1.0, 1.0, n), kernel)
    if spec.y2 == "gaussian":
        rng = window.rng(STREAM_Y2)
        locs = _lattice_locations(rng, window.lo, window.hi)
        y2 = JumpField(locs, spec.scale * rng.standard_normal(len(locs)), kernel)
    return y1, y2


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class FieldValues:
    values: np.ndarray
    error_bound: float


def evaluate_field(fields, points, abs_tol: float = 0.0, dense_limit: float = 4e6) -> FieldValues:
    """``sum_i y_i f(v - u_i)`` at each point.

    With ``abs_tol > 0`` atoms farther than the radius where
    ``sum |y| * g(r) <= abs_tol`` are skipped; the skipped total is bounded by
    ``abs_tol`` and returned as ``error_bound``.
    """
    fields = [fields] if isinstance(fields, JumpField) else list(fields)
    if not fields:
        raise ValueError("no fields given")
    d = fields[0].kernel.dimension
    P = np.asarray(points, dtype=float).reshape(-1, d)
    out = np.zeros(len(P))
    err = 0.0
    for F in fields:
        if not len(F):
            continue
        total = float(np.sum(np.abs(F.magnitudes)))
        if abs_tol > 0 and len(F) * len(P) > dense_limit:
            share = abs_tol / len(fields)
            rc = F.kernel.cutoff_radius(share / total)
            pairs = cKDTree(P).sparse_distance_matrix(cKDTree(F.locations), rc, output_type="ndarray")
            contrib = F.magnitudes[pairs["j"]] * F.kernel.radial(pairs["v"])
            out += np.bincount(pairs["i"], weights=contrib, minlength=len(P))
            err += share
        else:
            step = max(1, int(dense_limit // max(len(F), 1)))
            for s in range(0, len(P), step):
                diff = P[s:s + step, None, :] - F.locations[None, :, :]
                r = np.sqrt(np.sum(diff * diff, axis=-1))
                out[s:s + step] += F.kernel.radial(r) @ F.magnitudes
    return FieldValues(out, err)


@dataclass(frozen=True)
class SupremumEstimate:
    sup_estimate: float
    upper_bound: Optional[float]
    argmax: Optional[np.ndarray] = None


def grid_supremum(values, grid_step: float, dim: int, holder: Optional[tuple] = None) -> SupremumEstimate:
    """Maximum over grid nodes, with a Hölder upper bound when available.

    ``holder = (C, zeta)`` for the realised field gives
    ``upper_bound = max + C * (h sqrt(d) / 2)**zeta``.
    """
    values = np.asarray(values, dtype=float)
    i = int(np.argmax(values))
    est = float(values[i])
    if holder is None:
        return SupremumEstimate(est, None)
    C, zeta = holder
    return SupremumEstimate(est, est + C * (grid_step * math.sqrt(dim) / 2.0) ** zeta)


def field_holder(fields) -> Optional[tuple]:
    """Hölder bound ``(sum |y|) * C_kernel`` of a realised field, if the kernel has one."""
    fields = [fields] if isinstance(fields, JumpField) else list(fields)
    C, zeta = 0.0, 1.0
    for F in fields:
        h = F.kernel.holder()
        if h is None:
            return None
        C += float(np.sum(np.abs(F.magnitudes))) * h[0]
        zeta = min(zeta, h[1])
    return C, zeta


# ---------------------------------------------------------------------------
# certified supremum by branch and bound


@dataclass(frozen=True)
class CertifiedSupremum:
    lower: float
    upper: float
    argmax: np.ndarray
    cells_evaluated: int

    @property
    def value(self) -> float:
        return self.lower


def _cell_upper_bounds(F: JumpField, tree, centers, half, rc):
    """``sum_i y_i sup_{v in cell} f(v - u_i)`` over atoms within reach of each cell."""
    reach = rc + float(np.linalg.norm(half))
    ub = np.zeros(len(centers))
    if tree is None or not len(centers):
        return ub
    pairs = cKDTree(centers).sparse_distance_matrix(tree, reach, output_type="ndarray")
    if not len(pairs):
        return ub
    i, j = pairs["i"], pairs["j"]
    off = np.abs(F.locations[j] - centers[i])
    near = np.maximum(off - half, 0.0)
    far = off + half
    y = F.magnitudes[j]
    dmin = np.sqrt(np.sum(near * near, axis=-1))
    dmax = np.sqrt(np.sum(far * far, axis=-1))
    contrib = np.where(y > 0, y * F.kernel.radial(dmin), y * F.kernel.radial(dmax))
    ub = np.bincount(i, weights=contrib, minlength=len(centers))
    k = F.kernel
    if k.family != "gaussian" or k.truncation is not None:
        return ub
    # second-order Taylor bound around the centre: value + |gradient|.half + H |half|^2 / 2,
    # where H bounds the Hessian norm 2s (1 + 2 s r^2) exp(-s r^2) of each atom over the cell
    s = k.sigma
    diff = centers[i] - F.locations[j]
    gval = y * np.exp(-s * np.sum(diff * diff, axis=-1))
    val = np.bincount(i, weights=gval, minlength=len(centers))
    grad = np.stack([np.bincount(i, weights=-2.0 * s * gval * diff[:, a], minlength=len(centers))
                     for a in range(diff.shape[1])], axis=-1)
    t_lo, t_hi = s * dmin * dmin, s * dmax * dmax
    t_peak = np.clip(0.5, t_lo, t_hi)
    hess = 2.0 * s * np.abs(y) * (1.0 + 2.0 * t_peak) * np.exp(-t_peak)
    H = np.bincount(i, weights=hess, minlength=len(centers))
    taylor = val + np.abs(grad) @ half + 0.5 * H * float(half @ half)
    return np.minimum(ub, taylor)


def _coarse_upper_bounds(F: JumpField, origin, side, shape, rc):
    """Cell bounds from atoms binned on the cell grid (positive atoms only)."""
    pos = F.magnitudes > 0
    d = len(shape)
    pad = int(math.ceil(rc / side)) + 1
    idx = np.floor((F.locations[pos] - origin) / side).astype(int) + pad
    full = tuple(s + 2 * pad for s in shape)
    ok = np.all((idx >= 0) & (idx < np.array(full)), axis=-1)
    mass = np.zeros(full)
    np.add.at(mass, tuple(idx[ok].T), F.magnitudes[pos][ok])
    offs = np.arange(-pad, pad + 1)
    grids = np.meshgrid(*[offs] * d, indexing="ij")
    gap = np.sqrt(sum(np.maximum(np.abs(g) - 1, 0) ** 2 for g in grids)) * side
    K = np.where(gap <= rc, F.kernel.radial(gap), 0.0)
    conv = fftconvolve(mass, K, mode="same")
    sl = tuple(slice(pad, pad + s) for s in shape)
    # fft round-off is relative to the largest entry
    return np.maximum(conv[sl], 0.0) + 1e-9 * float(mass.max() if mass.size else 0.0)


def certified_supremum(fields, target, rtol: float = 1e-4, atol: float = 1e-9,
                       initial_side: Optional[float] = None, top_atoms: int = 16,
                       max_levels: int = 40) -> CertifiedSupremum:
    """Supremum of an atom field over ``target`` with a certified bracket.

    Cells covering the target are bounded above by summing, atom by atom,
    the largest kernel value over the cell; the field is evaluated at cell
    centres (projected into the target) for lower bounds. Cells whose bound
    cannot beat the best value by more than ``max(atol, rtol * best)`` are
    discarded and the rest are halved. On return
    ``lower <= sup_{v in target} X(v) <= upper``.
    """
    fields = [fields] if isinstance(fields, JumpField) else [F for F in fields]
    fields = [F for F in fields if len(F)]
    U = as_union(target)
    d = U.dim
    if not fields:
        p = U.project(np.zeros(d))[0]
        return CertifiedSupremum(0.0, 0.0, p, 0)
    if all(isinstance(b, Point) for b in U.bodies):
        P = np.array([b.location for b in U.bodies])
        vals = evaluate_field(fields, P).values
        i = int(np.argmax(vals))
        return CertifiedSupremum(float(vals[i]), float(vals[i]), P[i], len(P))

    # atoms beyond rc from a cell are dropped from its bound; their total is <= remainder
    total_pos = sum(float(np.sum(np.maximum(F.magnitudes, 0.0))) for F in fields)
    trees = [cKDTree(F.locations) for F in fields]

    # lower bound from the largest atoms
    cand = np.concatenate([F.locations[np.argsort(-F.magnitudes)[:top_atoms]] for F in fields])
    cand = U.project(cand)
    vals = evaluate_field(fields, cand).values
    k = int(np.argmax(vals))
    best, best_pt = float(vals[k]), cand[k]

    def tol():
        return max(atol, rtol * abs(best))

    def cutoff():
        # remainder per cell at most tol / 10
        level = 0.1 * tol() / max(total_pos, 1e-300)
        return max(F.kernel.cutoff_radius(level) for F in fields), 0.1 * tol()

    lo, hi = U.bounds()
    side = initial_side or min(F.kernel.length_scale for F in fields)
    shape = tuple(max(1, int(math.ceil((b - a) / side))) for a, b in zip(lo, hi))
    idx = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), axis=-1).reshape(-1, d)
    half = np.full(d, 0.5 * side)
    centers = lo + (idx + 0.5) * side
    meets = U.meets_cubes(centers - half, centers + half) | U.contains(centers)
    rc, rem = cutoff()
    ub = sum(_coarse_upper_bounds(F, lo, side, shape, rc) for F in fields).reshape(-1) + rem
    keep = meets & (ub > best + tol())
    discarded = float(np.max(ub[meets & ~keep], initial=-np.inf))
    centers, ub = centers[keep], ub[keep]
    evaluated = len(cand)

    for _ in range(max_levels):
        if not len(centers):
            break
        pts = U.project(centers)
        vals = evaluate_field(fields, pts).values
        evaluated += len(pts)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, best_pt = float(vals[k]), pts[k]
        rc, rem = cutoff()
        ub = sum(_cell_upper_bounds(F, T, centers, half, rc) for F, T in zip(fields, trees)) + rem
        keep = ub > best + tol()
        discarded = max(discarded, float(np.max(ub[~keep], initial=-np.inf)))
        centers, ub = centers[keep], ub[keep]
        if not len(centers):
            break
        # split surviving cells into 2^d children
        half = half / 2.0
        signs = np.stack(np.meshgrid(*[[-1.0, 1.0]] * d, indexing="ij"), axis=-1).reshape(-1, d)
        centers = (centers[:, None, :] + signs[None, :, :] * half).reshape(-1, d)
        child_lo, child_hi = centers - half, centers + half
        centers = centers[U.meets_cubes(child_lo, child_hi) | U.contains(centers)]
    upper = max(best, discarded, float(np.max(ub, initial=-np.inf)) if len(centers) else -np.inf)
    return CertifiedSupremum(best, upper, np.asarray(best_pt), evaluated)
