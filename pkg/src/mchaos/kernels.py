"""Layered covariance kernels and their regularity checks.

A kernel decomposition is a family of stationary, nonnegative, positive
definite layers K_j, each supported in the ball of radius b^{-j}, whose sum
is a log-correlated kernel.  Two concrete families are provided:

* exact-log (d = 1): sum_j K_j(t) = log(1/|t|) exactly;
* star-scale: K_j(t) = int_{b^j}^{b^{j+1}} Phi(u t) du/u for a radial
  positive definite seed Phi, giving log(1/|t|) + g(|t|).

Layers are radial, so every evaluator takes |t|.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import gamma as gamma_fn

from .core import BAdicGrid
from .errors import ArgumentError

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


# --- exact-log decomposition (d = 1) ---------------------------------------

def exact_log_layer(b: int, j: int, t) -> np.ndarray | float:
    """K_j(t) = int_{(b^{-(j+1)}, b^{-j}]} (u-|t|)_+ du/u^2, plus (1-|t|)_+ for j = 0."""
    x = np.abs(np.asarray(t, dtype=float))
    a, c = float(b) ** (-(j + 1)), float(b) ** (-j)
    lo = np.maximum(x, a)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(x < c, np.log(c / lo) + x * (1.0 / c - 1.0 / lo), 0.0)
    if j == 0:
        val = val + np.maximum(1.0 - x, 0.0)
    return float(val) if val.ndim == 0 else val


def exact_log_gap(b: int, j: int, t) -> np.ndarray | float:
    """K_j(0) - K_j(t) without cancellation for small |t|."""
    x = np.abs(np.asarray(t, dtype=float))
    a, c = float(b) ** (-(j + 1)), float(b) ** (-j)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = x * (b**j) * (b - 1)
        mid = np.log(np.maximum(x, a) / a) + 1.0 - x / c
        val = np.where(x <= a, inner, np.where(x < c, mid, math.log(b)))
    if j == 0:
        val = val + np.minimum(x, 1.0)
    return float(val) if val.ndim == 0 else val


# --- radial profiles --------------------------------------------------------

def bump(c: float = 1.0) -> Callable:
    """h_c(s) = exp(-c/(s(1/4-s))) on (0, 1/4), rescaled to peak 1.

    c = 1 is the default seed.  It concentrates on a thin shell |x|^2 ~ 1/8,
    so Phi_h is ~0.02 wide; smaller c flattens h and widens Phi_h.
    """
    if not c > 0:
        raise ArgumentError("bump sharpness c must be > 0")

    def h(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inside = (s > 0) & (s < 0.25)
        si = s[inside]
        out[inside] = np.exp(64.0 * c - c / (si * (0.25 - si)))
        return out

    return h


default_bump = bump(1.0)


class RadialProfile:
    """Radial function f on [0, 1] interpolated by a cubic spline in s = v^2.

    Interpolating in v^2 keeps the profile even in v, so f - f(0) = O(v^2)
    near the origin, which the H3 check relies on.
    """

    def __init__(self, v, values, support: float | None = None, ratio_bound: float | None = None):
        v = np.asarray(v, dtype=float)
        f = np.asarray(values, dtype=float)
        if v.ndim != 1 or v.shape != f.shape or v.size < 4:
            raise ArgumentError("profile needs matching 1-d arrays with >= 4 points")
        if v[0] != 0.0 or np.any(np.diff(v) <= 0) or v[-1] > 1.0 + 1e-12:
            raise ArgumentError("profile mesh must start at 0, increase, and stay in [0, 1]")
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise ArgumentError("profile values must be finite and >= 0")
        self.v = v
        self.values = f
        self.f0 = float(f[0])
        if support is None:
            nz = np.nonzero(f > 0)[0]
            support = float(v[min(nz[-1] + 1, v.size - 1)]) if nz.size else 0.0
        self.support = float(support)
        self._s = v**2
        self._spline = CubicSpline(self._s, f)
        if ratio_bound is None:
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.abs(f[1:] - self.f0) / v[1:] ** 2
            ratio_bound = float(np.max(r))
        self.ratio_bound = ratio_bound
        self._deficit_table()

    def _eval_s(self, s):
        s = np.asarray(s, dtype=float)
        out = np.clip(self._spline(np.clip(s, 0.0, self._s[-1])), 0.0, self.f0)
        return np.where(s <= self.support**2, out, 0.0)

    def __call__(self, v):
        v = np.abs(np.asarray(v, dtype=float))
        out = self._eval_s(v * v)
        return float(out) if out.ndim == 0 else out

    # D(x) = int_0^x (f0 - f(v))/v dv, tabulated on the knots in s
    def _integrand(self, s):
        return (self.f0 - self._eval_s(s)) / (2.0 * s)

    def _deficit_table(self):
        s = self._s
        lo, hi = s[:-1], s[1:]
        half = 0.5 * (hi - lo)
        nodes = lo[:, None] + half[:, None] * (_GL_X[None, :] + 1.0)
        pieces = (self._integrand(nodes) * _GL_W[None, :]).sum(axis=1) * half
        self._cum = np.concatenate([[0.0], np.cumsum(pieces)])

    def deficit(self, x):
        """int_0^x (f(0) - f(v)) / v dv for 0 <= x <= 1."""
        x = np.asarray(x, dtype=float)
        s = np.clip(x * x, 0.0, self._s[-1])
        k = np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, self._s.size - 2)
        lo = self._s[k]
        half = 0.5 * (s - lo)
        nodes = lo[..., None] + half[..., None] * (_GL_X + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(half[..., None] > 0, self._integrand(np.maximum(nodes, 1e-300)), 0.0)
        out = self._cum[k] + (vals * _GL_W).sum(axis=-1) * half
        return float(out) if out.ndim == 0 else out

    def g(self, x):
        """Tabulated g(x) = int_x^1 (f(v) - 1)/v dv (f(0) = 1), 0 for x >= 1."""
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 1.0, 0.0, self.deficit(np.minimum(x, 1.0)) - self._cum[-1])
        return float(out) if out.ndim == 0 else out


def profile_from_function(fn: Callable, n: int = 2049, support: float | None = None) -> RadialProfile:
    v = np.linspace(0.0, 1.0, n)
    return RadialProfile(v, fn(v), support=support)


def _check_h(h):
    s = np.linspace(0.0, 0.4, 4001)
    hv = np.asarray(h(s), dtype=float)
    if hv.shape != s.shape or not np.all(np.isfinite(hv)) or np.any(hv < 0):
        raise ArgumentError("h must be finite and nonnegative")
    if np.any(hv[s > 0.25 + 1e-12] != 0):
        raise ArgumentError("h must vanish outside [0, 1/4]")
    if not np.any(hv > 0):
        raise ArgumentError("h must not vanish identically")


def _composite_nodes(lo, hi, panels: int, order: int = 8):
    """Composite Gauss-Legendre nodes/weights on [lo, hi] (arrays broadcast)."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    u = (edges[:-1, None] + (edges[1:, None] - edges[:-1, None]) * (x[None, :] + 1) / 2).ravel()
    wu = (np.repeat(np.diff(edges), order) * np.tile(w, panels) / 2)
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    return lo + (hi - lo) * u, (hi - lo) * wu


def bump_selfconvolve(h: Callable | None = None, d: int = 1, mesh: int | None = None) -> RadialProfile:
    """Radial profile of Phi_h(t) = int h(|x-t|^2) h(|x|^2) dx, normalized to Phi_h(0) = 1."""
    h = default_bump if h is None else h
    _check_h(h)
    if d < 1:
        raise ArgumentError("d must be >= 1")
    n = mesh or (2049 if d == 1 else 1025)
    t = np.linspace(0.0, 1.0, n)
    if d == 1:
        x, w = _composite_nodes(t - 0.5, np.full_like(t, 0.5), panels=64, order=16)
        vals = (h(x**2) * h((x - t[:, None]) ** 2) * w).sum(axis=1)
    else:
        omega = 2 * math.pi ** ((d - 1) / 2) / gamma_fn((d - 1) / 2)
        vals = np.empty_like(t)
        for i, ti in enumerate(t):
            x1, w1 = _composite_nodes(ti - 0.5, 0.5, panels=32, order=8)
            rmax = np.sqrt(np.maximum(0.25 - np.maximum(x1**2, (x1 - ti) ** 2), 0.0))
            r, wr = _composite_nodes(np.zeros_like(rmax), rmax, panels=16, order=8)
            integrand = r ** (d - 2) * h(x1[:, None] ** 2 + r**2) * h((x1[:, None] - ti) ** 2 + r**2)
            vals[i] = omega * ((integrand * wr).sum(axis=1) * w1).sum()
    vals = np.maximum(vals, 0.0)
    if vals[0] <= 0:
        raise ArgumentError("Phi_h(0) vanished; h too small to resolve")
    vals = vals / vals[0]
    vals[-1] = 0.0  # Phi_h is supported in the closed unit ball
    return RadialProfile(t, vals, support=1.0)


@lru_cache(maxsize=8)
def default_profile(d: int = 1, c: float = 1.0) -> RadialProfile:
    """Phi_h for the bump h_c (cached)."""
    return bump_selfconvolve(bump(c), d)


# --- star-scale layers ------------------------------------------------------

def _quad(fn, lo, hi):
    # tolerances sit near machine precision; roundoff warnings are expected
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(fn, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=400)
    return val


def star_scale_layer(f: RadialProfile, b: int, j: int, t) -> float:
    """int_{b^j}^{b^{j+1}} f(u|t|) du/u by adaptive quadrature (reference path)."""
    r = float(np.linalg.norm(np.atleast_1d(t)))
    if r == 0.0:
        return math.log(b) * f.f0
    lo = r * float(b) ** j
    if lo >= 1.0:
        return 0.0
    hi = min(lo * b, 1.0)
    # w = log v turns f(v)/v dv into f(e^w) dw, a bounded smooth integrand
    return _quad(lambda w: f(math.exp(w)), math.log(lo), math.log(hi))


def g_correction(f: RadialProfile, x: float) -> float:
    """g(x) = int_x^1 (f(v) - 1)/v dv by adaptive quadrature."""
    if not x > 0:
        raise ArgumentError(f"g_correction needs x > 0, got {x}")
    if x >= 1.0:
        return 0.0
    return _quad(lambda w: f(math.exp(w)) - 1.0, math.log(x), 0.0)


# --- layer / decomposition types -------------------------------------------

@dataclass(frozen=True)
class LayerKernel:
    j: int
    b: int
    radial: Callable  # |t| -> K_j(t), vectorized
    k0: float
    support_radius: float
    d: int = 1
    gap_fn: Callable | None = None

    def __call__(self, t) -> np.ndarray:
        """Evaluate on offsets of shape (..., d) (or scalars when d = 1)."""
        t = np.asarray(t, dtype=float)
        r = np.abs(t) if self.d == 1 and (t.ndim == 0 or t.shape[-1] != 1) else np.linalg.norm(t, axis=-1)
        return self.radial(r)

    def gap(self, r) -> np.ndarray:
        if self.gap_fn is not None:
            return self.gap_fn(r)
        return self.k0 - self.radial(r)


@dataclass(frozen=True)
class KernelDecomposition:
    b: int
    alpha0: float
    j0: int
    kind: str
    factory: Callable[[int], LayerKernel] = field(repr=False)
    d: int = 1

    def layer(self, j: int) -> LayerKernel:
        if j < 0:
            raise ArgumentError("layer index must be >= 0")
        return self.factory(j)


def exact_log_decomposition(b: int = 2) -> KernelDecomposition:
    @lru_cache(maxsize=None)
    def factory(j):
        k0 = math.log(b) + (1.0 if j == 0 else 0.0)
        return LayerKernel(
            j, b,
            radial=lambda r: exact_log_layer(b, j, r),
            k0=k0,
            support_radius=float(b) ** (-j),
            gap_fn=lambda r: exact_log_gap(b, j, r),
        )

    return KernelDecomposition(b, 0.5, 1, "exact-log", factory, 1)


def star_scale_radial(f: RadialProfile, b: int, j: int, r):
    """Fast K_j(r) = log(c/a) - (D(c) - D(a)) with a = r b^j, c = min(r b^{j+1}, 1)."""
    r = np.abs(np.asarray(r, dtype=float))
    a = r * float(b) ** j
    c = np.minimum(a * b, 1.0)
    inside = (a < 1.0) & (r > 0)
    aa = np.where(inside, a, 0.5)
    cc = np.where(inside, c, 1.0)
    val = np.log(cc / aa) * f.f0 - (f.deficit(cc) - f.deficit(aa))
    out = np.where(r == 0, math.log(b) * f.f0, np.where(inside, np.maximum(val, 0.0), 0.0))
    return float(out) if out.ndim == 0 else out


def star_scale_gap(f: RadialProfile, b: int, j: int, r):
    r = np.abs(np.asarray(r, dtype=float))
    a = r * float(b) ** j
    c = a * b
    lb = math.log(b) * f.f0
    inner = c <= 1.0
    aa = np.clip(a, 0.0, 1.0)
    gap_inner = f.deficit(np.minimum(c, 1.0)) - f.deficit(aa)
    gap_outer = lb - star_scale_radial(f, b, j, r)
    out = np.where(inner, gap_inner, gap_outer)
    return float(out) if out.ndim == 0 else out


def star_scale_decomposition(f: RadialProfile | None = None, b: int = 2, d: int = 1) -> KernelDecomposition:
    f = default_profile(d) if f is None else f

    @lru_cache(maxsize=None)
    def factory(j):
        return LayerKernel(
            j, b,
            radial=lambda r: star_scale_radial(f, b, j, r),
            k0=math.log(b) * f.f0,
            support_radius=float(b) ** (-j),
            d=d,
            gap_fn=lambda r: star_scale_gap(f, b, j, r),
        )

    dec = KernelDecomposition(b, 1.0, 0, "star-scale", factory, d)
    object.__setattr__(dec, "profile", f)
    return dec


def make_decomposition(kind: str, b: int = 2, d: int = 1, profile: RadialProfile | None = None,
                       bump_c: float = 1.0) -> KernelDecomposition:
    if kind == "exact-log":
        if d != 1:
            raise ArgumentError("the exact-log decomposition is one-dimensional")
        return exact_log_decomposition(b)
    if kind == "star-scale":
        return star_scale_decomposition(profile or default_profile(d, bump_c), b, d)
    raise ArgumentError(f"unknown kernel kind {kind!r}")


# --- sigma-regularity report -----------------------------------------------

@dataclass
class SigmaReport:
    conditions: dict
    layers: list

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.conditions.values())

    def to_json(self) -> str:
        return json.dumps(self.conditions, indent=2, sort_keys=True)


def check_sigma_regular(decomp: KernelDecomposition, alpha0: float, j_max: int, mesh: int = 16,
                        h2_tol: float = 1e-10, growth_tol: float = 0.05, ratio_cap: float = 1e8,
                        zero_tol: float = 1e-14) -> SigmaReport:
    """Numerically check shrinking support, K_j(0) = log b, and rescaled regularity at 0.

    The H3 ratio |K_j(t) - K_j(0)| / (b^{j} |t|)^{2 alpha0} is sampled on
    t = b^{-j} 2^{-k}, k = 0..mesh.  A bounded ratio levels off, so H3 fails
    if any of the last three step-to-step factors r_{k+1}/r_k exceeds
    1 + ``growth_tol`` (a divergent ratio grows geometrically), or if a ratio
    exceeds ``ratio_cap``.
    """
    if j_max < decomp.j0:
        raise ArgumentError(f"j_max={j_max} below j0={decomp.j0}")
    b = decomp.b
    lb = math.log(b)
    layers = []
    h1 = {"pass": True, "worst_value": 0.0, "worst_location": None}
    h2 = {"pass": True, "worst_value": 0.0, "worst_location": None}
    h3 = {"pass": True, "worst_value": 0.0, "worst_location": None}
    ks = np.arange(mesh + 1)
    for j in range(j_max + 1):
        lay = decomp.layer(j)
        rj = float(b) ** (-j)
        # H1: nothing outside the ball of radius b^{-j}
        outside = rj * (1.0 + np.concatenate([np.geomspace(1e-9, 1e-1, 20), np.linspace(0.1, max(b**j - 1, 0.1), 40)]))
        kv = np.abs(lay.radial(outside))
        n_viol = int(np.count_nonzero(kv > zero_tol))
        if n_viol:
            h1["pass"] = False
        if kv.max() > h1["worst_value"]:
            h1["worst_value"] = float(kv.max())
            h1["worst_location"] = [j, float(outside[int(np.argmax(kv))])]
        # H2': K_j(0) = log b from j0 on
        dev = abs(lay.k0 - lb)
        if j >= decomp.j0 and dev > h2["worst_value"]:
            h2["worst_value"] = float(dev)
            h2["worst_location"] = [j, 0.0]
            if dev > h2_tol:
                h2["pass"] = False
        # H3
        t = rj * 2.0 ** (-ks.astype(float))
        ratios = np.abs(lay.gap(t)) / (t / rj) ** (2 * alpha0)
        tail = ratios[-4:]
        growth = float(np.max(tail[1:] / np.maximum(tail[:-1], 1e-300)))
        ok = bool(np.all(np.isfinite(ratios)) and ratios.max() <= ratio_cap and growth <= 1 + growth_tol)
        if not ok:
            h3["pass"] = False
        if ratios.max() > h3["worst_value"]:
            h3["worst_value"] = float(ratios.max())
            h3["worst_location"] = [j, float(t[int(np.argmax(ratios))])]
        layers.append({"j": j, "h1_violations": n_viol, "k0": lay.k0, "k0_minus_log_b": lay.k0 - lb,
                       "h3_max_ratio": float(ratios.max()), "h3_growth": growth})
    return SigmaReport({"H1": h1, "H2'": h2, "H3": h3}, layers)


# --- positive definiteness --------------------------------------------------

@dataclass(frozen=True)
class PsdReport:
    passed: bool
    min_eig: float
    max_eig: float
    method: str


def radial_kernel(fn: Callable) -> Callable:
    """Wrap r -> k(r) as an offset evaluator t -> k(|t|), t of shape (..., d)."""
    return lambda t: fn(np.linalg.norm(np.asarray(t, dtype=float), axis=-1))


def check_positive_definite(kernel: Callable, grid: BAdicGrid, stationary: bool = True,
                            tol: float = 1e-8, period: int = 4) -> PsdReport:
    """Spectral PSD test of a kernel sampled on the grid.

    Stationary kernels take offsets of shape (..., d) and are sampled on the
    torus [0, period)^d; its FFT is the circulant spectrum, i.e. the Fourier
    transform sampled at spacing 1/period.  Period 2 would miss kernels such
    as 1 - 2|t| whose transform is nonnegative exactly at half-integers.
    Otherwise ``kernel(t, s)`` is evaluated on all center pairs and
    diagonalized.
    """
    d, n = grid.d, grid.cells_per_axis
    if stationary:
        N = period * n
        k = np.arange(N)
        off = np.where(k < n, k, k - N) * grid.width
        mesh = np.stack(np.meshgrid(*([off] * d), indexing="ij"), axis=-1)
        c = np.asarray(kernel(mesh), dtype=float)
        eig = np.real(np.fft.fftn(c))
        method = "circulant-fft"
    else:
        x = grid.centers()
        mat = np.asarray(kernel(x[:, None, :], x[None, :, :]), dtype=float)
        eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        method = "dense-eigh"
    lo, hi = float(eig.min()), float(eig.max())
    return PsdReport(bool(lo >= -tol * max(hi, 0.0)), lo, hi, method)


def remainder_kernel(G: Callable, f: RadialProfile, lam: float) -> Callable:
    """R_lambda(t, s) = lambda + G(t, s) - g(|t - s|) as a two-point evaluator."""

    def R(t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        r = np.linalg.norm(t - s, axis=-1)
        return lam + np.asarray(G(t, s), dtype=float) - f.g(r)

    return R


def remainder_threshold(G: Callable, f: RadialProfile, grid: BAdicGrid, lam_max: float = 50.0,
                        tol: float = 1e-6) -> float | None:
    """Smallest lambda in [0, lam_max] for which R_lambda passes the PSD test (bisection)."""

    def ok(lam):
        return check_positive_definite(remainder_kernel(G, f, lam), grid, stationary=False).passed

    if not ok(lam_max):
        return None
    if ok(0.0):
        return 0.0
    lo, hi = 0.0, lam_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi
