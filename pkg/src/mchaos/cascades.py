"""Canonical and generalized Mandelbrot cascades on b-adic grids.

Generation k multiplies the density on each cell I of the level-k partition
by an independent mean-one weight: a constant W_I in the canonical case, or
a process W_I(b^k (t - l_I)) in the generalized case (here: geometric
Brownian motion or a user-supplied process, d = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import BAdicGrid, DensityField, lebesgue, make_rng, multiply_layer
from .errors import ArgumentError
from .theory import MomentProfile, gbm_profile


@dataclass(frozen=True)
class WeightLaw:
    """Law of a constant-in-space cascade weight W >= 0 with E[W] = 1."""

    kind: str  # discrete | lognormal | constant | custom
    values: tuple = ()
    probs: tuple = ()
    sigma: float = 0.0
    sampler: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "discrete":
            v, p = np.asarray(self.values, float), np.asarray(self.probs, float)
            if v.shape != p.shape or v.size == 0:
                raise ArgumentError("discrete law needs matching values/probs")
            if np.any(v < 0) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise ArgumentError("discrete law needs values >= 0 and probabilities summing to 1")
            if abs(float(v @ p) - 1) > 1e-12:
                raise ArgumentError(f"discrete law has mean {float(v @ p)} != 1")
        elif self.kind == "lognormal":
            if self.sigma < 0:
                raise ArgumentError("lognormal sigma must be >= 0")
        elif self.kind == "custom":
            if self.sampler is None:
                raise ArgumentError("custom law needs a sampler(rng, size)")
        elif self.kind != "constant":
            raise ArgumentError(f"unknown weight kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "constant":
            return np.ones(size)
        if self.kind == "discrete":
            return rng.choice(np.asarray(self.values, float), size=size, p=np.asarray(self.probs, float))
        if self.kind == "lognormal":
            return np.exp(self.sigma * rng.standard_normal(size) - 0.5 * self.sigma**2)
        out = np.asarray(self.sampler(rng, size), dtype=float)
        if out.shape != np.empty(size).shape:
            raise ArgumentError("custom sampler returned the wrong shape")
        return out

    def moment(self, p: float) -> float:
        if self.kind == "constant":
            return 1.0
        if self.kind == "discrete":
            v, pr = np.asarray(self.values, float), np.asarray(self.probs, float)
            return float(pr @ v**p)
        if self.kind == "lognormal":
            return math.exp(p * (p - 1) * self.sigma**2 / 2)
        raise ArgumentError("custom laws have no analytic moments; use estimate_moment")

    def mean_wlogw(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "discrete":
            v, pr = np.asarray(self.values, float), np.asarray(self.probs, float)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)
            return float(pr @ t)
        if self.kind == "lognormal":
            return self.sigma**2 / 2
        raise ArgumentError("custom laws have no analytic moments")

    @property
    def degenerate(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "discrete":
            v, pr = np.asarray(self.values, float), np.asarray(self.probs, float)
            return bool(np.all(v[pr > 0] == 1.0))
        if self.kind == "lognormal":
            return self.sigma == 0
        return False

    def profile(self) -> MomentProfile:
        return MomentProfile(self.moment, f"cascade({self.kind})", self.degenerate)


def discrete_law(values, probs) -> WeightLaw:
    return WeightLaw("discrete", tuple(float(x) for x in values), tuple(float(x) for x in probs))


def lognormal_law(sigma: float) -> WeightLaw:
    return WeightLaw("lognormal", sigma=float(sigma))


def constant_law() -> WeightLaw:
    return WeightLaw("constant")


def validate_custom(law: WeightLaw, seed: int = 0, samples: int = 4096) -> float:
    """Monte Carlo check of W >= 0 and E[W] = 1 within 4/sqrt(S); returns the mean."""
    w = law.sample(make_rng(seed, 0, 0, 0), samples)
    if np.any(w < 0):
        raise ArgumentError("custom weights must be nonnegative")
    mean = float(w.mean())
    if abs(mean - 1) > 4 / math.sqrt(samples):
        raise ArgumentError(f"custom weights have Monte Carlo mean {mean:.4f}, not 1")
    return mean


def _upsample(w: np.ndarray, factor: int) -> np.ndarray:
    for ax in range(w.ndim):
        w = np.repeat(w, factor, axis=ax)
    return w


def sample_canonical_cascade(law: WeightLaw, b: int, d: int, m: int, grid: BAdicGrid,
                             seed: int, sample_id: int = 0) -> DensityField:
    if grid.b != b or grid.d != d:
        raise ArgumentError("grid does not match (b, d)")
    if grid.level < m:
        raise ArgumentError(f"grid level {grid.level} < cascade level {m}")
    f = lebesgue(grid)
    f = multiply_layer(DensityField(grid, f.values, f.m, (int(seed), int(sample_id))), np.ones(grid.shape))
    for k in range(1, m + 1):
        w = law.sample(make_rng(seed, sample_id, k, 0), (b**k,) * d)
        f = multiply_layer(f, _upsample(w, b ** (grid.level - k)))
    return f


# --- generalized cascades (d = 1) ------------------------------------------

@dataclass(frozen=True)
class WeightProcess:
    """A mean-one process W(u), u in [0,1], sampled along many independent paths.

    ``sampler(rng, u)`` receives rescaled times u (shape (n_paths, n_points),
    each row increasing, identical rows) and returns W along each row.
    """

    kind: str  # gbm | custom
    sigma: float = 0.0
    sampler: Callable | None = field(default=None, compare=False)
    alpha0: float = 0.5
    moment_fn: Callable | None = field(default=None, compare=False)

    def sample(self, rng, u: np.ndarray) -> np.ndarray:
        if self.kind == "gbm":
            return gbm_paths(self.sigma, u, rng)
        return np.asarray(self.sampler(rng, u), dtype=float)

    def profile(self) -> MomentProfile:
        if self.kind == "gbm":
            return gbm_profile(self.sigma)
        if self.moment_fn is None:
            raise ArgumentError("custom process needs a declared moment bound p -> sup_t E[W^p]")
        return MomentProfile(self.moment_fn, "cascade(custom)")


def gbm_paths(sigma: float, u: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """exp(sigma B(u) - sigma^2 u / 2) along rows, B a standard Brownian motion."""
    u = np.asarray(u, dtype=float)
    du = np.diff(u, axis=-1, prepend=0.0)
    if np.any(du < 0):
        raise ArgumentError("rescaled times must increase along each path")
    B = np.cumsum(rng.standard_normal(u.shape) * np.sqrt(du), axis=-1)
    return np.exp(sigma * B - 0.5 * sigma**2 * u)


def sample_generalized_cascade(process: WeightProcess, b: int, m: int, grid: BAdicGrid,
                               seed: int, sample_id: int = 0) -> DensityField:
    if grid.d != 1 or grid.b != b:
        raise ArgumentError("generalized cascades are implemented for d = 1 on a matching grid")
    if grid.level < m:
        raise ArgumentError(f"grid level {grid.level} < cascade level {m}")
    M = grid.level
    f = lebesgue(grid)
    f = multiply_layer(DensityField(grid, f.values, f.m, (int(seed), int(sample_id))), np.ones(grid.shape))
    for k in range(1, m + 1):
        per = b ** (M - k)
        # centers of the grid cells inside I, mapped to [0,1] by t -> b^k (t - l_I)
        u = (np.arange(per) + 0.5) / per
        w = process.sample(make_rng(seed, sample_id, k, 0), np.broadcast_to(u, (b**k, per)))
        f = multiply_layer(f, w.reshape(grid.shape))
    return f


def sample_gbm_cascade(sigma: float, b: int, m: int, grid: BAdicGrid, seed: int,
                       sample_id: int = 0) -> DensityField:
    if not 0 <= sigma < math.sqrt(2 * math.log(b)):
        raise ArgumentError(f"sigma must lie in [0, sqrt(2 log b)), got {sigma}")
    return sample_generalized_cascade(WeightProcess("gbm", sigma=sigma), b, m, grid, seed, sample_id)


def gbm_moment(sigma: float, p: float, t: float) -> float:
    return math.exp(p * (p - 1) * sigma**2 * t / 2)


def gbm_increment_moment(sigma: float, t: float, s: float) -> float:
    """E|W(t) - W(s)|^2 for the GBM weight."""
    return abs(math.exp(sigma**2 * t) - math.exp(sigma**2 * s))


def cascade_moment_report(spec, p_grid, b: int, d: int = 1) -> dict:
    """Moment conditions E[W^p] < b^{d(p-1)} and E[W log W] < d log b.

    ``spec`` is a WeightLaw or a WeightProcess (sup over t is analytic for GBM).
    """
    p_grid = [float(p) for p in p_grid]
    if any(not 1 < p <= 2 for p in p_grid):
        raise ArgumentError("p grid must lie in (1, 2]")
    if isinstance(spec, WeightProcess):
        if spec.kind != "gbm":
            raise ArgumentError("analytic report needs a built-in process")
        mom = spec.profile()
        wlogw = spec.sigma**2 / 2
        degenerate = spec.sigma == 0
    else:
        mom = spec.moment
        wlogw = spec.mean_wlogw()
        degenerate = spec.degenerate
    rows = []
    for p in p_grid:
        e = float(mom(p))
        thr = float(b) ** (d * (p - 1))
        rows.append({"p": p, "moment": e, "threshold": thr, "pass": bool(e < thr)})
    return {
        "moments": rows,
        "wlogw": wlogw,
        "wlogw_threshold": d * math.log(b),
        "wlogw_pass": bool(wlogw < d * math.log(b)),
        "degenerate": bool(degenerate),
        "pass": bool(all(r["pass"] for r in rows) and wlogw < d * math.log(b)),
    }
