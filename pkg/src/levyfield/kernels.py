"""Radial integration kernels and the sup-integral functional."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import beta as beta_fn, betaincc, gamma as gamma_fn, gammaincc

from .geometry import Box, as_union, outer_parallel_weights, unit_ball_volume

KERNEL_FAMILIES = ("gaussian", "power")


class KernelError(ValueError):
    pass


class DivergenceError(KernelError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Radial kernel ``f(u) = g(|u|)``, optionally cut off at ``|u| >= truncation``.

    ``gaussian``: ``g(r) = exp(-sigma r**2)``.
    ``power``: ``g(r) = (1 + r)**-((d + epsilon) / gamma)``.
    """

    family: str
    dimension: int = 1
    sigma: float = 1.0
    epsilon: float = 1.0
    gamma: float = 1.0
    truncation: Optional[float] = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        if self.dimension < 1:
            raise KernelError("dimension must be a positive integer")
        if self.family == "gaussian" and not self.sigma > 0:
            raise KernelError("sigma must be positive")
        if self.family == "power" and not (self.epsilon > 0 and 0 < self.gamma <= 1):
            raise KernelError("power kernel needs epsilon > 0 and gamma in (0, 1]")
        if self.truncation is not None and not self.truncation > 0:
            raise KernelError("truncation must be positive")

    @property
    def power(self) -> float:
        return (self.dimension + self.epsilon) / self.gamma

    @property
    def length_scale(self) -> float:
        return 1.0 / math.sqrt(self.sigma) if self.family == "gaussian" else 1.0

    def envelope(self, r):
        """Untruncated radial profile ``g``."""
        r = np.asarray(r, dtype=float)
        if self.family == "gaussian":
            return np.exp(-self.sigma * r * r)
        return (1.0 + r) ** -self.power

    def radial(self, r):
        """``g(r)`` times the truncation indicator."""
        val = self.envelope(r)
        if self.truncation is not None:
            val = np.where(np.asarray(r) < self.truncation, val, 0.0)
        return val

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.dimension == 1 and (u.ndim == 0 or u.shape[-1] != 1):
            r = np.abs(u)
        else:
            r = np.linalg.norm(u, axis=-1)
        return self.radial(r)

    def inverse_envelope(self, level: float) -> float:
        """Smallest ``r`` with ``g(r) <= level``."""
        if level >= 1:
            return 0.0
        if level <= 0:
            return math.inf
        if self.family == "gaussian":
            return math.sqrt(-math.log(level) / self.sigma)
        return level ** (-1.0 / self.power) - 1.0

    def cutoff_radius(self, level: float) -> float:
        r = self.inverse_envelope(level)
        return r if self.truncation is None else min(r, self.truncation)

    def holder(self):
        """``(constant, index)`` of a global Hölder bound, or ``None`` if discontinuous."""
        if self.truncation is not None:
            return None
        if self.family == "gaussian":
            return math.sqrt(2.0 * self.sigma) * math.exp(-0.5), 1.0
        return self.power, 1.0

    def to_dict(self) -> dict:
        d = {"family": self.family, "dimension": self.dimension, "truncation": self.truncation}
        if self.family == "gaussian":
            d["sigma"] = self.sigma
        else:
            d.update(epsilon=self.epsilon, gamma=self.gamma)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Kernel":
        return cls(**d)


def integrable(kernel: Kernel, exponent: float) -> bool:
    """Whether ``int_{R^d} g**exponent(|u|) du`` is finite."""
    if kernel.truncation is not None or kernel.family == "gaussian":
        return True
    return exponent * kernel.power > kernel.dimension


def radial_tail_integral(kernel: Kernel, exponent: float, m: float, R: float) -> float:
    """``int_R^inf g**exponent(x) 1{x < t} x**m dx`` in closed form."""
    def untruncated(a):
        if kernel.family == "gaussian":
            c = exponent * kernel.sigma
            s = 0.5 * (m + 1.0)
            return 0.5 * c**-s * gamma_fn(s) * gammaincc(s, c * a * a)
        q = exponent * kernel.power
        b = q - m - 1.0
        if b <= 0:
            return math.inf
        return beta_fn(m + 1.0, b) * betaincc(m + 1.0, b, a / (1.0 + a))

    R = max(float(R), 0.0)
    t = kernel.truncation
    if t is None:
        return float(untruncated(R))
    if R >= t:
        return 0.0
    return float(untruncated(R) - untruncated(t))


def total_integral(kernel: Kernel, exponent: float) -> float:
    d = kernel.dimension
    return d * unit_ball_volume(d) * radial_tail_integral(kernel, exponent, d - 1, 0.0)


def tail_radius(kernel: Kernel, exponent: float, budget: float) -> float:
    """Radius ``R`` with ``int_{|u| > R} g**exponent(|u|) du <= budget``."""
    if not integrable(kernel, exponent):
        raise DivergenceError("kernel power is not integrable at this exponent")
    d = kernel.dimension
    c = d * unit_ball_volume(d)

    def excess(R):
        return c * radial_tail_integral(kernel, exponent, d - 1, R) - budget

    if excess(0.0) <= 0:
        return 0.0
    hi = kernel.length_scale
    while excess(hi) > 0:
        hi *= 2.0
    return brentq(excess, 0.0, hi, xtol=1e-12, rtol=1e-12)


def sup_over_set(kernel: Kernel, B, u):
    """``sup_{v in B} f(v - u)``; for radial decreasing kernels this is ``g(dist(u, B))``."""
    out = kernel.radial(as_union(B).distance(u))
    single = np.ndim(u) == 0 or (np.ndim(u) == 1 and kernel.dimension > 1)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class FunctionalValue:
    value: float
    error_bound: float
    radius: float
    far_field_bound: float


def _far_field_bound(kernel, alpha, box_weights, R):
    return sum(w * radial_tail_integral(kernel, alpha, m - 1, R)
               for m, w in enumerate(box_weights) if m >= 1)


def _gauss_legendre_nodes(breaks, n_sub, order):
    x, w = np.polynomial.legendre.leggauss(order)
    pts, wts = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        edges = np.linspace(a, b, n_sub + 1)
        h = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        pts.append((mid[:, None] + h[:, None] * x[None, :]).ravel())
        wts.append((h[:, None] * w[None, :]).ravel())
    return np.concatenate(pts), np.concatenate(wts)


def _tensor_quadrature(fun, axes, chunk=1 << 20):
    d = len(axes)
    if d == 1:
        return float(np.dot(fun(axes[0][0][:, None]), axes[0][1]))
    # iterate over the first axis in blocks to bound memory
    rest_pts = np.stack(np.meshgrid(*[a[0] for a in axes[1:]], indexing="ij"), axis=-1).reshape(-1, d - 1)
    rest_w = np.prod(np.stack(np.meshgrid(*[a[1] for a in axes[1:]], indexing="ij"), axis=-1)
                     .reshape(-1, d - 1), axis=-1)
    x0, w0 = axes[0]
    step = max(1, chunk // len(rest_pts))
    total = 0.0
    for s in range(0, len(x0), step):
        xs = x0[s:s + step]
        P = np.concatenate([np.repeat(xs, len(rest_pts))[:, None],
                            np.tile(rest_pts, (len(xs), 1))], axis=1)
        vals = fun(P).reshape(len(xs), len(rest_pts))
        total += float(w0[s:s + step] @ (vals @ rest_w))
    return total


def alpha_functional(kernel: Kernel, B, alpha: float, tol: float = 1e-6,
                     order: int = 8, max_points: float = 2e7) -> FunctionalValue:
    """``int_{R^d} sup_{v in B} f**alpha(v - u) du``.

    The integral is split at the box ``bbox(B) + [-R, R]^d``. Outside it the
    integrand is bounded by the Steiner-type integral of the bounding box,
    which fixes ``R`` so that this far field is at most ``tol / 2``. Inside,
    composite Gauss-Legendre quadrature is refined (cells halved) until two
    successive estimates agree to ``tol / 2``. The returned ``error_bound`` is
    the far-field bound plus the last refinement difference.
    """
    if not integrable(kernel, alpha):
        raise DivergenceError(
            f"alpha * (d + epsilon) / gamma = {alpha * kernel.power:g} <= d: integral diverges")
    U = as_union(B)
    d = U.dim
    if d != kernel.dimension:
        raise KernelError("index set and kernel dimensions differ")
    lo, hi = U.bounds()
    sides = np.maximum(hi - lo, 0.0)
    if np.all(sides > 0):
        weights = outer_parallel_weights(Box(tuple(lo), tuple(sides)))
    else:
        # degenerate bounding box: pad to a thin box, which only enlarges the bound
        pad = np.where(sides > 0, sides, 1e-12)
        weights = outer_parallel_weights(Box(tuple(lo), tuple(pad)))

    if kernel.truncation is not None:
        R = kernel.truncation
        far = 0.0
    else:
        R = kernel.length_scale
        while _far_field_bound(kernel, alpha, weights, R) > 0.5 * tol:
            R *= 1.5
        far = _far_field_bound(kernel, alpha, weights, R)

    def integrand(P):
        r = U.distance(P)
        return kernel.radial(r) ** alpha

    breaks = []
    for i in range(d):
        b = {lo[i] - R, hi[i] + R, lo[i], hi[i]}
        for body in U.bodies:
            blo, bhi = body.bounds()
            b.update((blo[i], bhi[i]))
        # geometric spacing away from the set for slowly decaying kernels
        s = kernel.length_scale
        while s < R:
            b.update((lo[i] - s, hi[i] + s))
            s *= 2.0
        breaks.append(np.array(sorted(b)))

    prev = None
    n_sub = 1
    diff = math.inf
    while True:
        axes = [_gauss_legendre_nodes(br, n_sub, order) for br in breaks]
        cur = _tensor_quadrature(integrand, axes)
        if prev is not None:
            diff = abs(cur - prev)
            if diff <= 0.5 * tol:
                break
        n_next = np.prod([len(a[0]) * 2 for a in axes])
        if n_next > max_points:
            break
        prev = cur
        n_sub *= 2
    return FunctionalValue(float(cur), float(far + diff), float(R), float(far))


def radial_alpha_functional(kernel: Kernel, alpha: float) -> float:
    """Closed form for a singleton set: ``int g**alpha(|u|) du``."""
    return total_integral(kernel, alpha)


def steiner_alpha_functional(kernel: Kernel, body, alpha: float) -> float:
    """Closed form for a single convex body via the outer parallel integral.

    ``|B| + sum_m mu_m int_0^inf g**alpha(x) x**(m-1) dx``.
    """
    w = outer_parallel_weights(body)
    return body.volume + sum(w[m] * radial_tail_integral(kernel, alpha, m - 1, 0.0)
                     for m in range(1, len(w)))
