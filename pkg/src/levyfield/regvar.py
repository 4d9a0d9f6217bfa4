"""Regularly varying Lévy jump measures.

Three analytic families are supported, all with closed-form tails and
quantiles on the positive half-line:

``pareto``
    ``rho((x, inf)) = scale * x**-alpha`` for ``x >= 1`` and ``scale`` below 1
    (no mass in ``(0, 1]``).
``stable``
    density ``scale * x**-(1 + alpha)`` on ``(0, inf)``, so that
    ``rho((x, inf)) = (scale / alpha) * x**-alpha``.
``shifted_pareto``
    ``rho((x, inf)) = scale * (1 + x)**-alpha``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

FAMILIES = ("pareto", "stable", "shifted_pareto")

# relative tolerance of the bisection fallback in ``generalized_inverse``
BISECTION_RTOL = 1e-12


class DomainError(ValueError):
    pass


class UnsupportedModelError(ValueError):
    pass


@dataclass(frozen=True)
class NegativePart:
    """Finite jump mass on ``(-inf, -1)``.

    Negative jumps are ``-W`` with ``W`` Pareto of index ``index`` on
    ``(1, inf)``; ``gamma_moment_bound`` is the declared upper bound on
    ``int |y|**gamma rho(dy)`` over that half-line.
    """

    mass: float
    gamma_moment_bound: float
    index: float = 2.0

    def __post_init__(self):
        if self.mass <= 0 or self.gamma_moment_bound <= 0 or self.index <= 0:
            raise DomainError("negative_part fields must be positive")

    def gamma_moment(self, gamma: float) -> float:
        if gamma >= self.index:
            return math.inf
        return self.mass * self.index / (self.index - gamma)


@dataclass(frozen=True)
class TailModel:
    family: str
    alpha: float
    scale: float = 1.0
    negative_part: Optional[NegativePart] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not self.scale > 0:
            raise DomainError("scale must be positive")

    @property
    def rho_one(self) -> float:
        """Mass of jumps above 1, ``rho((1, inf))``."""
        return tail_mass(self, 1.0)

    @property
    def finite_variation(self) -> bool:
        return self.family != "stable" or self.alpha < 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TailModel":
        d = dict(d)
        neg = d.pop("negative_part", None)
        if neg is not None and not isinstance(neg, NegativePart):
            neg = NegativePart(**neg)
        return cls(negative_part=neg, **d)


def _check_positive(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError(f"{name} must be > 0")
    return x


def _scalar_or_array(out, like):
    return float(out) if np.ndim(like) == 0 else out


def tail_mass(model: TailModel, x):
    """Return ``rho((x, inf))``; vectorised over ``x``."""
    xa = _check_positive(x, "x")
    a, c = model.alpha, model.scale
    if model.family == "pareto":
        out = np.where(xa >= 1, c * np.maximum(xa, 1.0) ** -a, c)
    elif model.family == "stable":
        out = (c / a) * xa**-a
    else:
        out = c * (1.0 + xa) ** -a
    return _scalar_or_array(out, x)


def tail_mass_at_zero(model: TailModel) -> float:
    """``rho((0, inf))``, possibly infinite."""
    return math.inf if model.family == "stable" else model.scale


def tail_quantile(model: TailModel, p):
    """Generalized inverse ``inf{y > 0 : rho((y, inf)) <= p}``.

    For ``pareto`` at exactly ``p == scale`` the lower support endpoint 1 is
    returned; for ``p`` above the total positive mass the result is 0.
    """
    pa = _check_positive(p, "p")
    a, c = model.alpha, model.scale
    if model.family == "pareto":
        out = np.where(pa <= c, (c / pa) ** (1.0 / a), 0.0)
    elif model.family == "stable":
        out = (c / (a * pa)) ** (1.0 / a)
    else:
        out = np.where(pa < c, (c / pa) ** (1.0 / a) - 1.0, 0.0)
    return _scalar_or_array(out, p)


def generalized_inverse(tail: Callable[[float], float], p: float, lo: float = 0.0,
                        hi: float = 1.0, rtol: float = BISECTION_RTOL) -> float:
    """Bisection for ``inf{y > lo : tail(y) <= p}`` for a nonincreasing ``tail``.

    Used for tails without a closed-form inverse.
    """
    if p <= 0:
        raise DomainError("p must be > 0")
    while tail(hi) > p:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise DomainError("tail does not fall below p")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if tail(mid) <= p:
            hi = mid
        else:
            lo = mid
    return hi


def norming_constant(model: TailModel, volume, x: float = 1.0):
    """Norming constant ``a`` with ``volume * rho((a x, inf)) ~ x**-alpha * rho_one``.

    Defined as the generalized inverse at ``rho_one / volume``; ``x`` only
    enters through the returned threshold ``a * x`` when ``x != 1``.
    """
    v = np.asarray(volume, dtype=float)
    if np.any(v < 1):
        raise DomainError("volume must be >= 1")
    a = tail_quantile(model, model.rho_one / v)
    return _scalar_or_array(np.asarray(a) * x, volume)


@dataclass(frozen=True)
class NormingSequence:
    model: TailModel

    @property
    def rho_one(self) -> float:
        return self.model.rho_one

    def a(self, volume):
        return norming_constant(self.model, volume)

    def limit(self, x):
        """``x**-alpha * rho_one``, the limiting exceedance intensity."""
        return np.asarray(x, dtype=float) ** -self.model.alpha * self.rho_one


def small_jump_mean(model: TailModel, delta: float) -> float:
    """``int_{(0, delta]} y rho(dy)`` in closed form."""
    if not 0 < delta <= 1:
        raise DomainError("delta must lie in (0, 1]")
    a, c = model.alpha, model.scale
    if model.family == "pareto":
        return 0.0
    if model.family == "stable":
        if a >= 1:
            raise UnsupportedModelError("stable jumps with alpha >= 1 have infinite variation")
        return c * delta ** (1.0 - a) / (1.0 - a)
    # integrate by parts: -delta*T(delta) + int_0^delta T
    if a == 1:
        integral = c * math.log1p(delta)
    else:
        integral = c * ((1.0 + delta) ** (1.0 - a) - 1.0) / (1.0 - a)
    return integral - delta * c * (1.0 + delta) ** -a


def slow_sequence(model: TailModel, beta: float, volumes: Iterable[float]) -> np.ndarray:
    """``d_n = a_n**(1 - eps / (2 beta))`` with ``eps = beta - alpha``."""
    if beta <= model.alpha:
        raise DomainError("beta must exceed alpha")
    eps = beta - model.alpha
    a_n = np.asarray(norming_constant(model, np.asarray(list(volumes), dtype=float)))
    return a_n ** (1.0 - eps / (2.0 * beta))


def normalized_tail(model: TailModel) -> Callable:
    """Tail of the jump distribution above 1, ``rho(. & (1, inf)) / rho_one``.

    Defined on the whole real line (equal to 1 below 1), as needed by
    ``karamata_envelope_check``.
    """
    def tail(s):
        s = np.asarray(s, dtype=float)
        return np.asarray(tail_mass(model, np.maximum(s, 1.0))) / model.rho_one
    return tail


@dataclass
class EnvelopeCertificate:
    C: float
    K: float
    x0: float
    holds: bool
    block_constants: list
    reason: str = ""


def karamata_envelope_check(tail: Callable, beta: float, x_grid: Sequence[float],
                            y_grid: Sequence[float], alpha: Optional[float] = None,
                            K: float = 1.0, c_budget: float = 1e6,
                            growth_slack: float = 0.01) -> EnvelopeCertificate:
    """Grid certificate for ``tail(x - y) <= tail(x) * C * (K + max(y, 0)**beta)``.

    For each candidate ``x0`` (taken from ``x_grid``) the smallest admissible
    ``C`` is computed over the grid points with ``x >= x0``. Since a finite
    grid always yields a finite ``C``, the certificate also requires that the
    constant needed on the top decade of ``x`` does not exceed the one needed
    below it by more than ``growth_slack``: an envelope that only holds
    because the grid stops is reported as failing.
    """
    if alpha is not None and beta <= alpha:
        reason_pre = "beta <= alpha: "
    else:
        reason_pre = ""
    x = np.sort(np.asarray(x_grid, dtype=float))
    y = np.asarray(y_grid, dtype=float)
    if np.any(x <= 0) or np.any(~np.isfinite(y)):
        raise DomainError("grids must be finite and x_grid positive")
    X, Y = np.meshgrid(x, y, indexing="ij")
    num = np.asarray(tail(X - Y), dtype=float)
    den = np.asarray(tail(x), dtype=float)[:, None] * (K + np.maximum(Y, 0.0) ** beta)
    ratio = num / den
    per_x = ratio.max(axis=1)

    log_x = np.log10(x)
    top = log_x >= log_x[-1] - 1.0
    best = None
    for i0, x0 in enumerate(x):
        sel = np.arange(len(x)) >= i0
        lower = sel & ~top
        upper = sel & top
        if not upper.any():
            break
        C = float(per_x[sel].max())
        c_low = float(per_x[lower].max()) if lower.any() else None
        c_up = float(per_x[upper].max())
        bounded = c_low is None or c_up <= c_low * (1.0 + growth_slack)
        ok = np.isfinite(C) and C <= c_budget and bounded and lower.any()
        blocks = [c_low, c_up]
        if ok:
            return EnvelopeCertificate(C, K, float(x0), True, blocks)
        if best is None:
            best = EnvelopeCertificate(C, K, float(x0), False, blocks)
    if best is None:
        best = EnvelopeCertificate(math.inf, K, float(x[0]), False, [])
    best.reason = reason_pre + (
        "required constant grows over the top decade of x" if best.block_constants
        else "grid too short to certify")
    return best
