"""Poisson random coverings: MRC and PMC layers.

Points (x, y) of a Poisson process on R x (0,1) with intensity dx (x) Lambda(dy)
cover the open interval (x, x + y).  Band j collects the points with
y in [b^{-j}, b^{-(j-1)}).  A cell center t is hit by a point of band j iff
the point lies in Delta_j(t) = {t - y < x < t}.

    MRC layer:  X_{b,j}(t)   = 1{no hit} / exp(-yMass_j)
    PMC layer:  X_{a,b,j}(t) = a^{#hits} exp((1 - a) yMass_j)

with yMass_j = int_band y Lambda(dy).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import digamma

from .core import BAdicGrid, DensityField, lebesgue, make_rng, multiply_layer
from .errors import ArgumentError, NumericError


@dataclass(frozen=True)
class DensitySpec:
    """Density part of Lambda on (0,1): constant c, power c y^-beta, or a callable."""

    kind: str  # constant | power | custom
    c: float = 1.0
    beta: float = 0.0
    fn: Callable | None = field(default=None, compare=False)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.full_like(y, self.c)
        if self.kind == "power":
            return self.c * y ** (-self.beta)
        return np.asarray(self.fn(y), dtype=float)


@dataclass(frozen=True)
class LambdaMeasure:
    atoms: tuple = ()  # ((y, w), ...)
    density: DensitySpec | None = None
    canonical_alpha: float | None = None

    def __post_init__(self):
        for y, w in self.atoms:
            if not (0 < y < 1) or w < 0:
                raise ArgumentError(f"atom ({y}, {w}) must have y in (0,1) and mass >= 0")
        if self.canonical_alpha is not None and not self.canonical_alpha > 0:
            raise ArgumentError("canonical alpha must be > 0")
        if self.density is not None and self.density.kind not in ("constant", "power", "custom"):
            raise ArgumentError(f"unknown density kind {self.density.kind!r}")


def canonical_lambda(alpha: float) -> LambdaMeasure:
    """Lambda_alpha = sum_{n >= 1} delta_{alpha/n}."""
    return LambdaMeasure(canonical_alpha=float(alpha))


def lambda_from_spec(spec: dict) -> LambdaMeasure:
    """Parse {atoms: [[y, w], ...], density: {kind, params}, builtin: {canonical_alpha: a}}."""
    unknown = set(spec) - {"atoms", "density", "builtin"}
    if unknown:
        raise ArgumentError(f"unknown Lambda keys {sorted(unknown)}")
    atoms = tuple((float(y), float(w)) for y, w in spec.get("atoms", []))
    dens = None
    if spec.get("density"):
        d = spec["density"]
        params = d.get("params", {})
        dens = DensitySpec(d["kind"], float(params.get("c", 1.0)), float(params.get("beta", 0.0)))
        if dens.kind == "custom":
            raise ArgumentError("custom densities are only available from Python")
    alpha = (spec.get("builtin") or {}).get("canonical_alpha")
    return LambdaMeasure(atoms, dens, None if alpha is None else float(alpha))


def _band(b: int, j: int) -> tuple[float, float]:
    if j < 1:
        raise ArgumentError("band index j must be >= 1")
    return float(b) ** (-j), float(b) ** (-(j - 1))


def _canonical_range(alpha: float, b: int, j: int) -> tuple[int, int]:
    """Atoms alpha/n in band j have n1 < n <= n2."""
    n2 = math.floor(alpha * float(b) ** j + 1e-9)
    n1 = math.floor(alpha * float(b) ** (j - 1) + 1e-9)
    return n1, n2


def _harmonic(n1: int, n2: int) -> float:
    """sum_{n1 < n <= n2} 1/n."""
    if n2 <= n1:
        return 0.0
    if n2 - n1 <= 100000:
        return float(np.sum(1.0 / np.arange(n1 + 1, n2 + 1, dtype=float)))
    return float(digamma(n2 + 1) - digamma(n1 + 1))


def _quad(fn, lo, hi):
    val, err = integrate.quad(fn, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)
    if not np.isfinite(val):
        raise NumericError(f"non-integrable band [{lo}, {hi})")
    return val


def band_integral(lam: LambdaMeasure, b: int, j: int, r: float = 0.0) -> float:
    """int_band (y - r)_+ Lambda(dy); r = 0 gives yMass."""
    lo, hi = _band(b, j)
    total = 0.0
    if lam.canonical_alpha is not None:
        a = lam.canonical_alpha
        n1, n2 = _canonical_range(a, b, j)
        if r > 0:
            # alpha/n > r  <=>  n < alpha / r
            n2 = min(n2, math.ceil(a / r) - 1)
        if n2 > n1:
            total += a * _harmonic(n1, n2) - r * (n2 - n1)
    for y, w in lam.atoms:
        if lo <= y < hi and y > r:
            total += w * (y - r)
    if lam.density is not None:
        lo2 = max(lo, r)
        if lo2 < hi:
            total += _quad(lambda y: (y - r) * float(lam.density(y)), lo2, hi)
    return total


def band_masses(lam: LambdaMeasure, b: int, j: int) -> tuple[float, float]:
    """(int_band y Lambda(dy), Lambda(band))."""
    lo, hi = _band(b, j)
    mass = 0.0
    if lam.canonical_alpha is not None:
        n1, n2 = _canonical_range(lam.canonical_alpha, b, j)
        mass += max(n2 - n1, 0)
    mass += sum(w for y, w in lam.atoms if lo <= y < hi)
    if lam.density is not None:
        mass += _quad(lambda y: float(lam.density(y)), lo, hi)
    return band_integral(lam, b, j, 0.0), mass


def chi(lam: LambdaMeasure, b: int, j_range=None) -> float:
    """max over the last half of j_range of yMass_j / log b (limsup surrogate)."""
    js = list(range(1, 41) if j_range is None else j_range)
    if len(js) < 2:
        raise ArgumentError("chi needs at least two bands")
    tail = js[len(js) // 2:]
    return max(band_masses(lam, b, j)[0] for j in tail) / math.log(b)


def chi_min(lam: LambdaMeasure, bs, j_range=None) -> float:
    """chi(Lambda) = min over b of chi(b, Lambda)."""
    return min(chi(lam, b, j_range) for b in bs)


# --- Poisson sampling -------------------------------------------------------

@dataclass(frozen=True)
class PppBandSample:
    j: int
    x: np.ndarray
    y: np.ndarray


def sample_band_y(lam: LambdaMeasure, b: int, j: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. draws from Lambda restricted to band j, normalized."""
    lo, hi = _band(b, j)
    parts, weights = [], []
    if lam.canonical_alpha is not None:
        n1, n2 = _canonical_range(lam.canonical_alpha, b, j)
        if n2 > n1:
            parts.append("canonical")
            weights.append(float(n2 - n1))
    ats = [(y, w) for y, w in lam.atoms if lo <= y < hi and w > 0]
    if ats:
        parts.append("atoms")
        weights.append(sum(w for _, w in ats))
    if lam.density is not None:
        dm = _quad(lambda y: float(lam.density(y)), lo, hi)
        if dm > 0:
            parts.append("density")
            weights.append(dm)
    out = np.empty(size)
    if size == 0 or not parts:
        return out[:0] if not parts else out
    w = np.asarray(weights)
    comp = rng.choice(len(parts), size=size, p=w / w.sum())
    for ci, part in enumerate(parts):
        sel = comp == ci
        k = int(sel.sum())
        if k == 0:
            continue
        if part == "canonical":
            n = rng.integers(n1 + 1, n2 + 1, size=k)
            out[sel] = lam.canonical_alpha / n
        elif part == "atoms":
            ys = np.array([y for y, _ in ats])
            ws = np.array([w_ for _, w_ in ats])
            out[sel] = rng.choice(ys, size=k, p=ws / ws.sum())
        else:
            out[sel] = _sample_density(lam.density, lo, hi, k, rng)
    return out


def _sample_density(dens: DensitySpec, lo: float, hi: float, k: int, rng) -> np.ndarray:
    u = rng.random(k)
    if dens.kind == "constant":
        return lo + (hi - lo) * u
    if dens.kind == "power" and abs(dens.beta - 1.0) > 1e-12:
        e = 1.0 - dens.beta
        return (lo**e + u * (hi**e - lo**e)) ** (1.0 / e)
    if dens.kind == "power":
        return lo * (hi / lo) ** u
    ys = np.linspace(lo, hi, 4097)
    pdf = dens(ys)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(ys))])
    return np.interp(u * cdf[-1], cdf, ys)


def sample_ppp_band(lam: LambdaMeasure, b: int, j: int, rng: np.random.Generator,
                    window=(-1.0, 1.0)) -> PppBandSample:
    """Poisson points of band j with x in ``window``.

    A Poisson total with uniformly assigned atoms is equal in law to
    independent Poisson counts per atom line.
    """
    lo_w, hi_w = window
    _, mass = band_masses(lam, b, j)
    n = int(rng.poisson((hi_w - lo_w) * mass)) if mass > 0 else 0
    y = sample_band_y(lam, b, j, n, rng)
    x = lo_w + (hi_w - lo_w) * rng.random(n)
    return PppBandSample(j, x, y)


def hit_counts(sample: PppBandSample, grid: BAdicGrid) -> np.ndarray:
    """Number of points with t - y < x < t at each cell center t."""
    if grid.d != 1:
        raise ArgumentError("coverings are one-dimensional")
    n, delta = grid.cells_per_axis, grid.width
    lo = np.floor(sample.x / delta - 0.5).astype(np.int64) + 1
    hi = np.ceil((sample.x + sample.y) / delta - 0.5).astype(np.int64) - 1
    lo = np.clip(lo, 0, n)
    hi = np.clip(hi, -1, n - 1)
    ok = lo <= hi
    diff = np.zeros(n + 1, dtype=np.int64)
    np.add.at(diff, lo[ok], 1)
    np.add.at(diff, hi[ok] + 1, -1)
    return np.cumsum(diff[:-1])


def mrc_layer(sample: PppBandSample, lam: LambdaMeasure, b: int, j: int, grid: BAdicGrid):
    """(X_{b,j} at cell centers, covered mask)."""
    ymass, _ = band_masses(lam, b, j)
    covered = hit_counts(sample, grid) > 0
    vals = np.where(covered, 0.0, math.exp(ymass))
    return vals, covered


def pmc_layer(sample: PppBandSample, lam: LambdaMeasure, a: float, b: int, j: int, grid: BAdicGrid) -> np.ndarray:
    if not 0 < a < 1:
        raise ArgumentError(f"a must lie in (0,1), got {a}")
    ymass, _ = band_masses(lam, b, j)
    return a ** hit_counts(sample, grid) * math.exp((1 - a) * ymass)


def _check_chi(lam, b):
    c = chi(lam, b, range(1, 41))
    if c >= 1:
        warnings.warn(f"chi(b, Lambda) = {c:.4f} >= 1: degenerate regime", RuntimeWarning, stacklevel=3)
    return c


def sample_mrc(lam: LambdaMeasure, b: int, m: int, grid: BAdicGrid, seed: int, sample_id: int = 0):
    """(density of MRC at level m, uncovered-cell mask)."""
    if grid.level < m:
        raise ArgumentError(f"grid level {grid.level} < m={m}")
    _check_chi(lam, b)
    f = lebesgue(grid)
    f = multiply_layer(DensityField(grid, f.values, f.m, (int(seed), int(sample_id))), np.ones(grid.shape))
    for j in range(1, m + 1):
        s = sample_ppp_band(lam, b, j, make_rng(seed, sample_id, j, 0))
        vals, _ = mrc_layer(s, lam, b, j, grid)
        f = multiply_layer(f, vals)
    return f, f.values > 0


def sample_pmc(lam: LambdaMeasure, a: float, b: int, m: int, grid: BAdicGrid, seed: int,
               sample_id: int = 0) -> DensityField:
    if grid.level < m:
        raise ArgumentError(f"grid level {grid.level} < m={m}")
    f = lebesgue(grid)
    f = multiply_layer(DensityField(grid, f.values, f.m, (int(seed), int(sample_id))), np.ones(grid.shape))
    for j in range(1, m + 1):
        s = sample_ppp_band(lam, b, j, make_rng(seed, sample_id, j, 0))
        f = multiply_layer(f, pmc_layer(s, lam, a, b, j, grid))
    return f


# --- moment oracles ---------------------------------------------------------

def mrc_moment(lam: LambdaMeasure, b: int, j: int, p: float) -> float:
    return math.exp((p - 1) * band_masses(lam, b, j)[0])


def pmc_moment(lam: LambdaMeasure, a: float, b: int, j: int, p: float) -> float:
    return math.exp((a**p - a * p + p - 1) * band_masses(lam, b, j)[0])


def covering_covariance_oracle(lam: LambdaMeasure, b: int, j: int, t: float, s: float,
                               a: float | None = None) -> float:
    """E[X_j(t) X_j(s)] for the MRC layer (a is None) or the PMC layer.

    Both equal exp(c * omega(Delta_j(t) & Delta_j(s))) with c = 1 (MRC) or
    (1 - a)^2 (PMC); the intersection has omega = int_band (y - |t-s|)_+ Lambda(dy),
    which is yMass - |t - s| * mass whenever |t - s| <= b^{-j}.
    """
    w = band_integral(lam, b, j, abs(t - s))
    c = 1.0 if a is None else (1 - a) ** 2
    return math.exp(c * w)


def sample_band_counts(lam: LambdaMeasure, b: int, j: int, points, n_samples: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Hit counts #(PPP & Delta_j(t)) for many independent samples at once.

    Only points with x in (min(t) - b^{-(j-1)}, max(t)) can hit, so the
    window is restricted to that interval.  Returns shape (n_samples, len(points)).
    """
    pts = np.asarray(points, dtype=float)
    _, hi = _band(b, j)
    w_lo, w_hi = float(pts.min()) - hi, float(pts.max())
    _, mass = band_masses(lam, b, j)
    per = rng.poisson((w_hi - w_lo) * mass, size=n_samples)
    total = int(per.sum())
    owner = np.repeat(np.arange(n_samples), per)
    y = sample_band_y(lam, b, j, total, rng)
    x = w_lo + (w_hi - w_lo) * rng.random(total)
    out = np.empty((n_samples, pts.size), dtype=np.int64)
    for k, t in enumerate(pts):
        hit = (x < t) & (t < x + y)
        out[:, k] = np.bincount(owner[hit], minlength=n_samples)
    return out
