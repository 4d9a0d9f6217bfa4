"""Convex bodies, p-convex index sets and the cube-grid approximation.

Only axis-aligned boxes and Euclidean balls are supported as convex bodies.
``Point`` is a degenerate (zero-volume) index set, accepted wherever a set
``B`` is only used through distances.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln


class GeometryError(ValueError):
    pass


def unit_ball_volume(m: int) -> float:
    """Volume ``omega_m`` of the m-dimensional unit ball (``omega_0 = 1``)."""
    return math.exp(0.5 * m * math.log(math.pi) - gammaln(0.5 * m + 1.0))


def _points(u, d):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and d > 1 or u.ndim == 0:
        u = u.reshape(1, -1) if u.ndim == 1 else u.reshape(1, 1)
    elif u.ndim == 1:
        u = u.reshape(-1, 1)
    if u.shape[-1] != d:
        raise GeometryError(f"expected points of dimension {d}, got shape {u.shape}")
    return u


@dataclass(frozen=True)
class Box:
    corner: tuple
    sides: tuple

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(float(c) for c in np.atleast_1d(self.corner)))
        object.__setattr__(self, "sides", tuple(float(s) for s in np.atleast_1d(self.sides)))
        if len(self.corner) != len(self.sides):
            raise GeometryError("corner and sides must have the same dimension")
        if any(not s > 0 for s in self.sides):
            raise GeometryError("box sides must be positive (non-empty interior)")

    @property
    def dim(self) -> int:
        return len(self.sides)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.corner)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.corner) + np.array(self.sides)

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def bounds(self):
        return self.lo, self.hi

    def contains(self, u) -> np.ndarray:
        u = _points(u, self.dim)
        return np.all((u >= self.lo) & (u <= self.hi), axis=-1)

    def distance(self, u) -> np.ndarray:
        u = _points(u, self.dim)
        gap = np.maximum(self.lo - u, 0.0) + np.maximum(u - self.hi, 0.0)
        return np.sqrt(np.sum(gap * gap, axis=-1))

    def project(self, u) -> np.ndarray:
        return np.clip(_points(u, self.dim), self.lo, self.hi)

    def contains_cubes(self, lo, hi) -> np.ndarray:
        """Whether the closed boxes ``[lo, hi]`` (rows) lie inside."""
        return np.all((lo >= self.lo) & (hi <= self.hi), axis=-1)

    def meets_cubes(self, lo, hi) -> np.ndarray:
        """Whether the boxes ``[lo, hi)`` meet the body in a set of positive volume."""
        return np.all((lo < self.hi) & (hi > self.lo), axis=-1)

    def scaled(self, r: float) -> "Box":
        return Box(tuple(r * np.array(self.corner)), tuple(r * np.array(self.sides)))

    def translated(self, shift) -> "Box":
        return Box(tuple(np.array(self.corner) + np.asarray(shift, float)), self.sides)

    def to_dict(self) -> dict:
        return {"shape": "box", "corner": list(self.corner), "sides": list(self.sides)}


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive (non-empty interior)")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.dim) * self.radius**self.dim

    def bounds(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def contains(self, u) -> np.ndarray:
        u = _points(u, self.dim)
        return np.linalg.norm(u - np.array(self.center), axis=-1) <= self.radius

    def distance(self, u) -> np.ndarray:
        u = _points(u, self.dim)
        return np.maximum(np.linalg.norm(u - np.array(self.center), axis=-1) - self.radius, 0.0)

    def project(self, u) -> np.ndarray:
        u = _points(u, self.dim)
        c = np.array(self.center)
        r = np.linalg.norm(u - c, axis=-1, keepdims=True)
        shrink = np.minimum(1.0, self.radius / np.maximum(r, 1e-300))
        return c + (u - c) * shrink

    def contains_cubes(self, lo, hi) -> np.ndarray:
        # farthest corner from the center
        c = np.array(self.center)
        far = np.maximum(np.abs(lo - c), np.abs(hi - c))
        return np.sqrt(np.sum(far * far, axis=-1)) <= self.radius

    def meets_cubes(self, lo, hi) -> np.ndarray:
        c = np.array(self.center)
        gap = np.maximum(lo - c, 0.0) + np.maximum(c - hi, 0.0)
        return np.sqrt(np.sum(gap * gap, axis=-1)) < self.radius

    def scaled(self, r: float) -> "Ball":
        return Ball(tuple(r * np.array(self.center)), r * self.radius)

    def translated(self, shift) -> "Ball":
        return Ball(tuple(np.array(self.center) + np.asarray(shift, float)), self.radius)

    def to_dict(self) -> dict:
        return {"shape": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Point:
    """Degenerate index set ``{location}``."""

    location: tuple

    def __post_init__(self):
        object.__setattr__(self, "location", tuple(float(c) for c in np.atleast_1d(self.location)))

    @property
    def dim(self) -> int:
        return len(self.location)

    volume = 0.0

    def bounds(self):
        p = np.array(self.location)
        return p, p.copy()

    def contains(self, u) -> np.ndarray:
        u = _points(u, self.dim)
        return np.all(u == np.array(self.location), axis=-1)

    def distance(self, u) -> np.ndarray:
        u = _points(u, self.dim)
        return np.linalg.norm(u - np.array(self.location), axis=-1)

    def project(self, u) -> np.ndarray:
        u = _points(u, self.dim)
        return np.broadcast_to(np.array(self.location), u.shape).copy()

    def scaled(self, r: float) -> "Point":
        return Point(tuple(r * np.array(self.location)))

    def translated(self, shift) -> "Point":
        return Point(tuple(np.array(self.location) + np.asarray(shift, float)))

    def to_dict(self) -> dict:
        return {"shape": "point", "location": list(self.location)}


ConvexBody = Union[Box, Ball]


def body_from_dict(d: dict):
    shape = d.get("shape")
    if shape == "box":
        return Box(tuple(d["corner"]), tuple(d["sides"]))
    if shape == "ball":
        return Ball(tuple(d["center"]), d["radius"])
    if shape == "point":
        return Point(tuple(d["location"]))
    raise GeometryError(f"unsupported shape {shape!r}")


def _pair_meets(a, b) -> bool:
    if isinstance(a, Ball) and isinstance(b, Ball):
        return float(np.linalg.norm(np.subtract(a.center, b.center))) <= a.radius + b.radius
    if isinstance(a, Box) and isinstance(b, Box):
        return bool(np.all((a.lo <= b.hi) & (b.lo <= a.hi)))
    if isinstance(a, Ball):
        a, b = b, a
    if isinstance(a, Box) and isinstance(b, Ball):
        return float(a.distance(np.array(b.center))[0]) <= b.radius
    raise GeometryError("unsupported body pair")


class BodyUnion:
    """Finite union of bodies (no connectivity requirement)."""

    def __init__(self, bodies: Iterable):
        self.bodies = tuple(bodies)
        if not self.bodies:
            raise GeometryError("empty union")
        dims = {b.dim for b in self.bodies}
        if len(dims) != 1:
            raise GeometryError("bodies have mixed dimensions")
        self.dim = dims.pop()

    def __repr__(self):
        return f"{type(self).__name__}({list(self.bodies)!r})"

    def __eq__(self, other):
        return type(self) is type(other) and self.bodies == other.bodies

    def __hash__(self):
        return hash((type(self), self.bodies))

    def bounds(self):
        los, his = zip(*(b.bounds() for b in self.bodies))
        return np.min(los, axis=0), np.max(his, axis=0)

    def contains(self, u) -> np.ndarray:
        return np.any([b.contains(u) for b in self.bodies], axis=0)

    def distance(self, u) -> np.ndarray:
        return np.min([b.distance(u) for b in self.bodies], axis=0)

    def project(self, u) -> np.ndarray:
        """Nearest point of the union."""
        u = _points(u, self.dim)
        dist = np.array([b.distance(u) for b in self.bodies])
        proj = np.array([b.project(u) for b in self.bodies])
        return proj[np.argmin(dist, axis=0), np.arange(len(u))]

    def contains_cubes(self, lo, hi) -> np.ndarray:
        # conservative for p >= 2: a cube straddling two bodies counts as outer
        return np.any([b.contains_cubes(lo, hi) for b in self.bodies], axis=0)

    def meets_cubes(self, lo, hi) -> np.ndarray:
        return np.any([b.meets_cubes(lo, hi) for b in self.bodies], axis=0)

    @cached_property
    def volume(self) -> float:
        if len(self.bodies) == 1:
            return self.bodies[0].volume
        if all(isinstance(b, Box) for b in self.bodies):
            return _box_union_volume(self.bodies)
        return _qmc_volume(self)

    def scaled(self, r: float):
        return type(self)([b.scaled(r) for b in self.bodies])

    def translated(self, shift):
        return type(self)([b.translated(shift) for b in self.bodies])

    def to_dict(self) -> dict:
        return {"bodies": [b.to_dict() for b in self.bodies]}


class PConvexSet(BodyUnion):
    """Connected union of convex bodies containing the origin."""

    def __init__(self, bodies: Iterable, require_origin: bool = True):
        super().__init__(bodies)
        for b in self.bodies:
            if not isinstance(b, (Box, Ball)):
                raise GeometryError("p-convex sets are built from boxes and balls")
        if not self.is_connected():
            raise GeometryError("union of bodies is not connected")
        if require_origin and not bool(self.contains(np.zeros(self.dim))[0]):
            raise GeometryError("p-convex index sets must contain the origin")

    @property
    def p(self) -> int:
        return len(self.bodies)

    def is_connected(self) -> bool:
        n = len(self.bodies)
        if n == 1:
            return True
        adj = np.zeros((n, n), dtype=bool)
        for i, j in itertools.combinations(range(n), 2):
            adj[i, j] = adj[j, i] = _pair_meets(self.bodies[i], self.bodies[j])
        ncomp, _ = connected_components(csr_matrix(adj), directed=False)
        return ncomp == 1

    def scaled(self, r: float) -> "PConvexSet":
        return PConvexSet([b.scaled(r) for b in self.bodies], require_origin=False)

    def translated(self, shift) -> "PConvexSet":
        return PConvexSet([b.translated(shift) for b in self.bodies], require_origin=False)

    def relative_intrinsic_volumes(self) -> np.ndarray:
        """``sum_i V_j(C_i) / |C|**(j/d)`` for ``j = 0..d``."""
        V = np.sum([intrinsic_volumes(b) for b in self.bodies], axis=0)
        return V / self.volume ** (np.arange(self.dim + 1) / self.dim)

    @classmethod
    def from_dict(cls, d: dict, require_origin: bool = True) -> "PConvexSet":
        return cls([body_from_dict(b) for b in d["bodies"]], require_origin=require_origin)


def as_union(B) -> BodyUnion:
    if isinstance(B, BodyUnion):
        return B
    if isinstance(B, (Box, Ball, Point)):
        return BodyUnion([B])
    if isinstance(B, (list, tuple)):
        return BodyUnion(B)
    raise GeometryError(f"unsupported index set {type(B).__name__}")


def _box_union_volume(boxes: Sequence[Box]) -> float:
    # exact by coordinate compression
    d = boxes[0].dim
    edges = [np.unique(np.concatenate([[b.lo[i], b.hi[i]] for b in boxes])) for i in range(d)]
    mids = np.meshgrid(*[0.5 * (e[1:] + e[:-1]) for e in edges], indexing="ij")
    widths = np.meshgrid(*[np.diff(e) for e in edges], indexing="ij")
    pts = np.stack([m.ravel() for m in mids], axis=-1)
    cell = np.prod([w.ravel() for w in widths], axis=0)
    inside = np.any([b.contains(pts) for b in boxes], axis=0)
    return float(np.sum(cell[inside]))


def _qmc_volume(union: BodyUnion, m: int = 20) -> float:
    from scipy.stats import qmc

    lo, hi = union.bounds()
    pts = lo + (hi - lo) * qmc.Sobol(union.dim, scramble=True, seed=0).random_base2(m)
    return float(np.prod(hi - lo) * np.mean(union.contains(pts)))


def elementary_symmetric(values: Sequence[float]) -> np.ndarray:
    """``[e_0, ..., e_n]`` of the given values (from the polynomial prod(1 + a_i t))."""
    coeffs = np.array([1.0])
    for a in values:
        coeffs = np.convolve(coeffs, [1.0, a])
    return coeffs


def intrinsic_volumes(body) -> np.ndarray:
    """``[V_0, ..., V_d]`` of a box, ball or point."""
    if isinstance(body, Box):
        return elementary_symmetric(body.sides)
    if isinstance(body, Ball):
        d, r = body.dim, body.radius
        return np.array([math.comb(d, j) * unit_ball_volume(d) / unit_ball_volume(d - j) * r**j
                         for j in range(d + 1)])
    if isinstance(body, Point):
        V = np.zeros(body.dim + 1)
        V[0] = 1.0
        return V
    raise GeometryError(f"unsupported shape {type(body).__name__}")


def steiner_coefficients(body) -> np.ndarray:
    """Coefficients ``c_m`` with ``|body + B(r)| = sum_m c_m r**m``."""
    V = intrinsic_volumes(body)
    d = len(V) - 1
    return np.array([unit_ball_volume(m) * V[d - m] for m in range(d + 1)])


def steiner_volume(body, r: float) -> float:
    if r < 0:
        raise GeometryError("r must be nonnegative")
    c = steiner_coefficients(body)
    return float(np.polynomial.polynomial.polyval(r, c))


@dataclass(frozen=True)
class TubeBounds:
    lower: float
    upper: float


def boundary_tube_bounds(body, r: float) -> TubeBounds:
    """Two-sided bound on the volume of the r-neighbourhood of the boundary."""
    if not r > 0:
        raise GeometryError("r must be positive")
    c = steiner_coefficients(body)
    lower = float(sum(c[m] * r**m for m in range(1, len(c))))
    return TubeBounds(lower, 2.0 * lower)


def outer_parallel_weights(body) -> np.ndarray:
    """Weights ``mu_m`` such that, for decreasing ``g``,

    ``int_{(C + B(r))^c} g(dist(u, C)) du = sum_m mu_m int_r^inf g(x) x**(m - 1) dx``

    for ``m = 1..d`` (``m = d - j``). They are the derivative of the Steiner
    polynomial: ``mu_m = m * omega_m * V_{d-m}``; index 0 is unused.
    """
    c = steiner_coefficients(body)
    return np.arange(len(c)) * c


# ---------------------------------------------------------------------------
# cube grid approximation of scaled index sets


def grid_side(volume: float, k: int, L: int, d: int) -> int:
    """``t = L * floor((volume / k)**(1/d))`` (guarded against round-off)."""
    return int(L * math.floor((volume / k) ** (1.0 / d) + 1e-9))


@dataclass
class GridScheme:
    k: int
    L: int
    t: int
    volume: float
    inner: np.ndarray  # P: integer indices z, shape (p, d)
    outer: np.ndarray  # Q: integer indices z, shape (q, d)
    dim: int

    @property
    def p(self) -> int:
        return len(self.inner)

    @property
    def q(self) -> int:
        return len(self.outer)

    def lattice_points(self, which: str = "minus") -> np.ndarray:
        """Points of ``D_minus`` (``which='minus'``) or ``D_plus`` in ``(L Z)^d``."""
        Z = self.inner if which == "minus" else self.outer
        offs = np.stack(np.meshgrid(*[np.arange(0, self.t, self.L)] * self.dim, indexing="ij"),
                        axis=-1).reshape(-1, self.dim)
        return (Z[:, None, :] * self.t + offs[None, :, :]).reshape(-1, self.dim)

    def cube_index(self, u, which: str = "plus") -> np.ndarray:
        """Whether each point lies in a closed cell of ``P`` (minus) or ``Q`` (plus)."""
        Z = self.inner if which == "minus" else self.outer
        u = _points(u, self.dim)
        lo = Z * self.t
        hi = lo + self.t
        hit = np.zeros(len(u), dtype=bool)
        for a, b in zip(lo, hi):
            hit |= np.all((u >= a) & (u <= b), axis=-1)
        return hit

    @property
    def c_L(self) -> float:
        """Half-width of the smallest centred cube holding ``D_plus``, over ``volume**(1/d)``."""
        if not self.q:
            return 0.0
        ext = max(np.abs(self.outer * self.t).max(), np.abs((self.outer + 1) * self.t - self.L).max())
        return float(ext) / self.volume ** (1.0 / self.dim)

    def to_csv(self, path) -> None:
        inner = {tuple(z) for z in self.inner.tolist()}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"z{i + 1}" for i in range(self.dim)] + ["class"])
            for z in self.outer.tolist():
                w.writerow(z + ["inner" if tuple(z) in inner else "boundary"])


def build_grid(C, k: int, L: int) -> GridScheme:
    C = as_union(C)
    d = C.dim
    vol = C.volume
    if k > vol:
        raise GeometryError(f"degenerate grid: k={k} exceeds |C|={vol:g}")
    t = grid_side(vol, k, L, d)
    if t < L:
        raise GeometryError("degenerate grid: cube side below L")
    lo, hi = C.bounds()
    ranges = [np.arange(int(math.floor(a / t)), int(math.floor(b / t)) + 1) for a, b in zip(lo, hi)]
    Z = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d)
    clo = Z * float(t)
    chi = clo + t
    meets = C.meets_cubes(clo, chi)
    inside = C.contains_cubes(clo, chi) & meets
    return GridScheme(k=k, L=L, t=t, volume=vol, inner=Z[inside], outer=Z[meets], dim=d)


@dataclass
class CountRow:
    k: int
    p_ratio_min: float
    p_ratio_max: float
    q_ratio_min: float
    q_ratio_max: float
    p_ratio_last: float
    q_ratio_last: float
    t_last: int
    c_L_max: float


def count_limit_experiment(C, scalings: Sequence[float], k_list: Sequence[int], L: int = 1,
                           tail_fraction: float = 1.0 / 3.0) -> List[CountRow]:
    """Ratios ``p L^d / k`` and ``q L^d / k`` along ``C_n = r_n C``.

    Min/max are taken over the last ``tail_fraction`` of the admissible part
    of the sequence; ``*_last`` refer to the largest ``r_n``.
    """
    C = as_union(C)
    d = C.dim
    rows = []
    for k in k_list:
        pr, qr, cls, t_last = [], [], [], None
        for r in scalings:
            Cn = C.scaled(r)
            if Cn.volume < k or grid_side(Cn.volume, k, L, d) < L:
                continue
            g = build_grid(Cn, k, L)
            pr.append(g.p * L**d / k)
            qr.append(g.q * L**d / k)
            cls.append(g.c_L)
            t_last = g.t
        if not pr:
            raise GeometryError(f"no admissible scaling for k={k}")
        m = max(1, int(math.ceil(len(pr) * tail_fraction)))
        rows.append(CountRow(k, min(pr[-m:]), max(pr[-m:]), min(qr[-m:]), max(qr[-m:]),
                             pr[-1], qr[-1], t_last, max(cls)))
    return rows
