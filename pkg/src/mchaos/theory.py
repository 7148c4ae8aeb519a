"""Closed-form dimension predictions and the sup-over-p bound optimizer.

All bounds share the shape

    min{ 2 alpha0, sup_{1<p<=p0} 2 Theta(p) / (p log b) },
    Theta(p) = d (p-1) log b - log E(p),

where E(p) is the limsup over layers of the p-th moment of a layer weight
(the "moment profile").  The sup is always found numerically so the closed
forms can be cross-checked against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ArgumentError, NumericError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MomentProfile:
    """p -> limsup_j sup_t E[P_j(t)^p], with a label for reports."""

    fn: Callable[[float], float]
    name: str = "custom"
    degenerate: bool = False

    def __call__(self, p: float) -> float:
        return float(self.fn(p))


def gmc_profile(gamma: float, b: int) -> MomentProfile:
    return MomentProfile(lambda p: b ** (gamma**2 * p * (p - 1) / 2), f"gmc(gamma={gamma})", gamma == 0)


def mrc_profile(chi: float, b: int) -> MomentProfile:
    return MomentProfile(lambda p: math.exp((p - 1) * chi * math.log(b)), f"mrc(chi={chi})", chi == 0)


def pmc_profile(a: float, chi: float, b: int) -> MomentProfile:
    def fn(p):
        return math.exp((a**p - a * p + p - 1) * chi * math.log(b))

    return MomentProfile(fn, f"pmc(a={a}, chi={chi})", chi == 0 or a == 1)


def d_gamma(gamma: float, d: int) -> float:
    crit = math.sqrt(2 * d)
    if not 0 < gamma < crit:
        raise ArgumentError(f"gamma must lie in (0, sqrt(2d)) = (0, {crit:.6g}), got {gamma}")
    if gamma < crit / 2:
        return d - gamma**2
    return (crit - gamma) ** 2


def d_sigma(sigma: float, b: int) -> float:
    lb = math.log(b)
    if not 0 < sigma < math.sqrt(2 * lb):
        raise ArgumentError(f"sigma must lie in (0, sqrt(2 log b)), got {sigma}")
    if sigma < math.sqrt(2 * lb) / 2:
        return 1 - sigma**2 / lb
    return (math.sqrt(2) - sigma / math.sqrt(lb)) ** 2


def theta(p: float, profile: Callable[[float], float], b: int, d: int) -> float:
    if p <= 1:
        raise ArgumentError(f"theta needs p > 1, got {p}")
    e = profile(p)
    if not e > 0:
        raise NumericError(f"moment profile nonpositive at p={p}: {e}")
    return d * (p - 1) * math.log(b) - math.log(e)


def golden_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200):
    """Golden-section search for the max of a unimodal f on [lo, hi]."""
    a, c = lo, hi
    x1 = c - GOLDEN * (c - a)
    x2 = a + GOLDEN * (c - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if c - a <= tol:
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (c - a)
            f2 = f(x2)
        else:
            c, x2, f2 = x2, x1, f1
            x1 = c - GOLDEN * (c - a)
            f1 = f(x1)
    cands = [(f1, x1), (f2, x2), (f(a), a), (f(c), c)]
    best = max(cands)
    return best[1], best[0]


def sup_over_p(g: Callable[[float], float], p0: float, n_grid: int = 512, tol: float = 1e-12):
    """Maximize g on (1, p0]: dense grid, then golden refinement.

    Returns (p_star, sup_value).
    """
    if not p0 > 1:
        raise ArgumentError(f"p0 must exceed 1, got {p0}")
    ps = np.linspace(1 + 1e-6, p0, n_grid)
    vals = np.array([g(p) for p in ps])
    k = int(np.argmax(vals))
    lo = ps[max(k - 1, 0)]
    hi = ps[min(k + 1, n_grid - 1)]
    p_star, v = golden_max(g, lo, hi, tol)
    if vals[k] > v:
        p_star, v = ps[k], vals[k]
    return float(p_star), float(v)


def structure_ratio(profile, b: int, d: int) -> Callable[[float], float]:
    """p -> 2 Theta(p) / (p log b)."""
    lb = math.log(b)
    return lambda p: 2 * theta(p, profile, b, d) / (p * lb)


def lf_bound(alpha0: float, p0: float, profile, b: int, d: int = 1) -> float:
    if not 0 < alpha0 <= 1:
        raise ArgumentError(f"alpha0 must lie in (0,1], got {alpha0}")
    if not 1 < p0 <= 2:
        raise ArgumentError(f"p0 must lie in (1,2], got {p0}")
    _, s = sup_over_p(structure_ratio(profile, b, d), p0)
    return min(2 * alpha0, s)


def gmc_sup(gamma: float, d: int, b: int = 2) -> tuple[float, float]:
    """Numeric sup of 2 Theta_gamma(p)/(p log b) over (1, min{2d/gamma^2, 2}]."""
    p0 = min(2 * d / gamma**2, 2.0)
    return sup_over_p(structure_ratio(gmc_profile(gamma, b), b, d), p0)


def gmc_bound(gamma: float, d: int, alpha0: float = 1.0) -> float:
    return min(2 * alpha0, d_gamma(gamma, d))


def mrc_bound(chi: float, alpha0: float = 0.5) -> float:
    return min(2 * alpha0, 1 - chi)


def pmc_bound(a: float, chi: float, alpha0: float = 0.5) -> float:
    return min(2 * alpha0, 1 - (1 - a) ** 2 * chi)


# --- cascades -------------------------------------------------------------

@dataclass(frozen=True)
class CascadeBound:
    value: float
    sup: float
    p_star: float
    degenerate: bool

    def __float__(self):
        return self.value


def cascade_bound(profile, b: int, d: int = 1, alpha0: float = 1.0, p0: float = 2.0) -> CascadeBound:
    """min{2 alpha0, sup_p [2d(1-1/p) - 2 log_b(E[W^p]^(1/p))]}.

    ``profile`` maps p to sup_t E[W(t)^p].
    """
    if not 0 < alpha0 <= 1:
        raise ArgumentError(f"alpha0 must lie in (0,1], got {alpha0}")
    if not 1 < p0 <= 2:
        raise ArgumentError(f"p0 must lie in (1,2], got {p0}")
    ew = profile(p0)
    if not ew < b ** (d * (p0 - 1)):
        raise ArgumentError(
            f"moment condition fails at p={p0}: E[W^p]={ew:.6g} >= b^(d(p-1))={b ** (d * (p0 - 1)):.6g}"
        )
    lb = math.log(b)

    def g(p):
        return 2 * d * (1 - 1 / p) - 2 * math.log(profile(p)) / (p * lb)

    p_star, s = sup_over_p(g, p0)
    degenerate = bool(getattr(profile, "degenerate", False)) or all(
        abs(profile(p) - 1.0) < 1e-15 for p in (1.25, 1.5, p0)
    )
    return CascadeBound(float(min(2 * alpha0, s)), float(s), float(p_star), degenerate)


def gbm_profile(sigma: float) -> MomentProfile:
    # sup over t in [0,1] of exp(p(p-1) sigma^2 t / 2) is attained at t = 1
    return MomentProfile(lambda p: math.exp(p * (p - 1) * sigma**2 / 2), f"gbm(sigma={sigma})", sigma == 0)


def gbm_bound(sigma: float, b: int) -> CascadeBound:
    lb = math.log(b)
    # moments blow past b^(p-1) at p = 2 log b / sigma^2; the optimizer
    # sqrt(2 log b)/sigma sits strictly inside that range
    p0 = min(math.sqrt(2 * lb) / sigma, 2.0)
    return cascade_bound(gbm_profile(sigma), b, 1, 0.5, p0)
