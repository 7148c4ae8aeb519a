"""Fourier coefficients of densities and dimension estimators.

Coefficients are exact for the piecewise-constant density on the grid:

    mu_hat(n) = delta^d prod_i [sinc(n_i delta) e^{-i pi n_i delta}] * FFT(v)[n mod N]

Slopes follow the convention that a positive number is a decay (or scaling)
exponent: |mu_hat(n)|^2 ~ |n|^{-D}, S_2(delta) ~ delta^{D}, N(delta) ~ delta^{-D}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft

from .core import DensityField, coarsen
from .errors import ArgumentError


@dataclass(frozen=True)
class FourierSpectrum:
    """Coefficients on {-N_max..N_max}^d; ``coeffs[n + N_max]`` is mu_hat(n)."""

    d: int
    N_max: int
    coeffs: np.ndarray

    def power(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2

    def norms(self) -> np.ndarray:
        k = np.arange(-self.N_max, self.N_max + 1, dtype=float)
        mesh = np.meshgrid(*([k] * self.d), indexing="ij", sparse=True)
        return np.sqrt(sum(x * x for x in mesh))

    def at(self, n) -> complex:
        idx = tuple(np.atleast_1d(n) + self.N_max)
        return complex(self.coeffs[idx])


def fourier_coefficients(field_: DensityField, N_max: int | None = None) -> FourierSpectrum:
    g = field_.grid
    n = g.cells_per_axis
    if N_max is None:
        N_max = n // 2
    if not 0 <= N_max <= n / 2:
        raise ArgumentError(f"N_max={N_max} beyond the grid Nyquist bound {n / 2}")
    F = sfft.fftn(field_.values)
    k = np.arange(-N_max, N_max + 1)
    delta = g.width
    fac = delta * np.sinc(k * delta) * np.exp(-1j * np.pi * k * delta)
    idx = np.mod(k, n)
    c = F[np.ix_(*([idx] * g.d))]
    for ax in range(g.d):
        shape = [1] * g.d
        shape[ax] = -1
        c = c * fac.reshape(shape)
    return FourierSpectrum(g.d, int(N_max), c)


def parseval_sides(field_: DensityField) -> tuple[float, float]:
    """(sum_n |mu_hat(n)|^2 / prod sinc^2(n_i delta) over one period, int v^2).

    Dividing out the per-cell sinc factor turns the spectrum into the DFT of
    the cell values, so both sides agree to rounding; summing the raw
    |mu_hat|^2 over a finite box would miss the aliased tail.
    """
    g = field_.grid
    n = g.cells_per_axis
    sp = fourier_coefficients(field_, n // 2)
    k = np.arange(-sp.N_max, sp.N_max + 1)
    keep = k < n / 2 if n % 2 == 0 else np.ones_like(k, bool)
    s = np.sinc(k * g.width) ** 2
    p = sp.power()
    for ax in range(g.d):
        shape = [1] * g.d
        shape[ax] = -1
        p = p / s.reshape(shape)
    p = p[np.ix_(*([keep] * g.d))]
    lhs = float(p.sum())
    rhs = float((field_.values**2).sum() * g.width**g.d)
    return lhs, rhs


@dataclass(frozen=True)
class BandTable:
    bands: np.ndarray      # band index L: b^{L-1} < |n| <= b^L
    count: np.ndarray
    max: np.ndarray
    mean: np.ndarray
    logmean: np.ndarray    # mean of log |mu_hat|^2 over the band
    log_freq: np.ndarray   # mean of log |n| over the band
    log_freq_max: np.ndarray  # log |n| at the band maximum


def band_statistics(spectrum: FourierSpectrum, b: int, power: np.ndarray | None = None) -> BandTable:
    """Per-band stats of |mu_hat(n)|^2 over the ball 0 < |n| <= N_max.

    ``power`` overrides |mu_hat|^2 (e.g. an ensemble mean on the same lattice).
    """
    P = spectrum.power() if power is None else np.asarray(power, dtype=float)
    r = spectrum.norms()
    sel = (r > 0) & (r <= spectrum.N_max + 1e-9)
    rv, pv = r[sel], P[sel]
    L = np.ceil(np.log(rv) / math.log(b) - 1e-12).astype(int)
    rows = []
    for band in range(int(L.min()), int(L.max()) + 1):
        m = L == band
        if not np.any(m):
            continue
        pb, rb = pv[m], rv[m]
        with np.errstate(divide="ignore"):
            lp = np.log(pb)
        k = int(np.argmax(pb))
        rows.append((band, m.sum(), pb.max(), pb.mean(), lp.mean(), np.log(rb).mean(), np.log(rb[k])))
    a = np.array(rows, dtype=float).T
    return BandTable(a[0].astype(int), a[1].astype(int), a[2], a[3], a[4], a[5], a[6])


@dataclass
class DimensionEstimate:
    slope: float
    intercept: float
    stderr: float
    bands: list
    method: str
    n_samples: int = 1
    flags: list = field(default_factory=list)
    table: dict = field(default_factory=dict)


def _fit(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    sxx = float(((x - x.mean()) ** 2).sum())
    se = math.sqrt(float(resid @ resid) / dof / sxx) if sxx > 0 else float("inf")
    return float(coef[0]), float(coef[1]), se


def _select(table: BandTable, band_range, trim):
    keep = np.ones(table.bands.size, bool)
    if band_range is not None:
        keep &= (table.bands >= band_range[0]) & (table.bands <= band_range[1])
    else:
        lo, hi = trim
        idx = np.nonzero(keep)[0]
        keep[:] = False
        keep[idx[lo: len(idx) - hi]] = True
    return keep


def _band_xy(table: BandTable, b: int, stat: str, keep):
    if stat == "logmean":
        return table.log_freq[keep], table.logmean[keep]
    if stat == "mean":
        return table.bands[keep] * math.log(b), np.log(table.mean[keep])
    if stat == "max":
        return table.log_freq_max[keep], np.log(table.max[keep])
    raise ArgumentError(f"unknown band statistic {stat!r}")


def estimate_fourier_dim(spectra: Sequence[FourierSpectrum], b: int, mode: str = "ensemble-mean",
                         stat: str = "logmean", band_range=None, trim=(1, 1)) -> DimensionEstimate:
    """Decay exponent D of |mu_hat(n)|^2 ~ |n|^{-D} from dyadic band statistics.

    ``stat`` picks the per-band summary: "logmean" regresses the band mean of
    log|mu_hat|^2 on the band mean of log|n| (exact for pure power laws),
    "mean" and "max" regress log of the band mean / max on L log b.
    """
    spectra = list(spectra)
    if not spectra:
        raise ArgumentError("no spectra")
    if mode == "ensemble-mean":
        P = np.mean([s.power() for s in spectra], axis=0)
        table = band_statistics(spectra[0], b, P)
        keep = _select(table, band_range, trim)
        if keep.sum() < 3:
            raise ArgumentError(f"only {int(keep.sum())} usable bands; need >= 3")
        x, y = _band_xy(table, b, stat, keep)
        s, c, se = _fit(x, y)
        return DimensionEstimate(-s, c, se, table.bands[keep].tolist(), "fourier-ensemble", len(spectra),
                                 table={"log_freq": x.tolist(), "log_stat": y.tolist(),
                                        "n_points": table.count[keep].tolist()})
    if mode in ("pathwise-max", "pathwise"):
        st = "max" if mode == "pathwise-max" else stat
        slopes, bands = [], None
        skipped = 0
        for s in spectra:
            if s.coeffs[(s.N_max,) * s.d].real <= 0:
                skipped += 1
                continue
            table = band_statistics(s, b)
            keep = _select(table, band_range, trim)
            if keep.sum() < 3:
                raise ArgumentError(f"only {int(keep.sum())} usable bands; need >= 3")
            x, y = _band_xy(table, b, st, keep)
            slopes.append(-_fit(x, y)[0])
            bands = table.bands[keep].tolist()
        if not slopes:
            raise ArgumentError("every sample had zero mass")
        sl = np.asarray(slopes)
        se = float(sl.std(ddof=1) / math.sqrt(sl.size)) if sl.size > 1 else float("inf")
        flags = [f"skipped {skipped} zero-mass samples"] if skipped else []
        return DimensionEstimate(float(sl.mean()), float("nan"), se, bands, "fourier-pathwise", int(sl.size), flags,
                                 {"slopes": sl.tolist()})
    raise ArgumentError(f"unknown mode {mode!r}")


def power_law_spectrum(D: float, d: int, N_max: int, c: float = 1.0) -> FourierSpectrum:
    """Synthetic spectrum with |mu_hat(n)|^2 = c |n|^{-D} (and mu_hat(0) = 1)."""
    k = np.arange(-N_max, N_max + 1, dtype=float)
    mesh = np.meshgrid(*([k] * d), indexing="ij", sparse=True)
    r = np.sqrt(sum(x * x for x in mesh))
    with np.errstate(divide="ignore"):
        amp = np.where(r > 0, np.sqrt(c) * r ** (-D / 2), 1.0)
    return FourierSpectrum(d, N_max, amp.astype(complex))


def weighted_lq_norm(spectrum: FourierSpectrum, tau: float, q: float) -> float:
    """(sum_{0<|n|<=N_max} (|n|^{tau/2} |mu_hat(n)|)^q)^{1/q}."""
    if q < 2 or tau < 0:
        raise ArgumentError("need q >= 2 and tau >= 0")
    r = spectrum.norms()
    sel = (r > 0) & (r <= spectrum.N_max + 1e-9)
    terms = r[sel] ** (tau / 2) * np.abs(spectrum.coeffs[sel])
    top = terms.max() if terms.size else 0.0
    if top == 0:
        return 0.0
    # scale to avoid overflow for large q
    return float(top * (((terms / top) ** q).sum()) ** (1.0 / q))


def martingale_diagnostic(sampler: Callable[[int, int], DensityField], tau: float, p: float, q: float,
                          m_range: Sequence[int], S: int, d: int = 1, alpha0: float = 1.0,
                          p0: float = 2.0, lf: float | None = None) -> dict:
    """Estimate E[||M_m||_{l^q}^p] across m, M_m = (|n|^{tau/2} mu_hat_m(n))_n.

    ``sampler(m, sample_id)`` returns the level-m density.  The verdict is
    "growth detected" iff the mean over the last third of m_range exceeds the
    first third by more than 3 combined standard errors.
    """
    if not tau >= 0:
        raise ArgumentError("tau must be >= 0")
    if not tau < 2 * alpha0:
        raise ArgumentError(f"need tau < 2 alpha0 = {2 * alpha0}")
    if not 1 < p <= p0 <= 2:
        raise ArgumentError(f"need 1 < p <= p0 <= 2, got p={p}, p0={p0}")
    qmin = max(2.0, 2 * d / (2 * alpha0 - tau))
    if not q > qmin:
        raise ArgumentError(f"need q > max(2, 2d/(2 alpha0 - tau)) = {qmin:.6g}, got {q}")
    ms = list(m_range)
    if len(ms) < 3:
        raise ArgumentError("m_range needs at least 3 levels")
    rows = []
    for m in ms:
        vals = np.array([weighted_lq_norm(fourier_coefficients(sampler(m, s)), tau, q) ** p for s in range(S)])
        se = float(vals.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0
        rows.append({"m": m, "mean": float(vals.mean()), "se": se})
    k = max(len(ms) // 3, 1)
    first, last = rows[:k], rows[-k:]
    mf = np.mean([r["mean"] for r in first])
    ml = np.mean([r["mean"] for r in last])
    sf = math.sqrt(sum(r["se"] ** 2 for r in first)) / k
    sl = math.sqrt(sum(r["se"] ** 2 for r in last)) / k
    growth = bool(ml > mf + 3 * math.sqrt(sf**2 + sl**2))
    return {
        "tau": tau, "p": p, "q": q, "rows": rows,
        "first_third_mean": float(mf), "last_third_mean": float(ml),
        "verdict": "growth detected" if growth else "consistent with bounded",
        "within_theorem": None if lf is None else bool(tau < lf),
    }


def correlation_sums(field_: DensityField, levels: Sequence[int]) -> np.ndarray:
    """S_2(b^{-k}) = sum over level-k cells of mu(cell)^2."""
    g = field_.grid
    out = []
    for k in levels:
        if not 0 <= k <= g.level:
            raise ArgumentError(f"level {k} outside [0, {g.level}]")
        mass = coarsen(field_.values, g.b, g.level - k) * float(g.b) ** (-k * g.d)
        out.append(float((mass**2).sum()))
    return np.asarray(out)


def correlation_dim(field_: DensityField, levels: Sequence[int]) -> DimensionEstimate:
    levels = list(levels)
    if len(levels) < 3:
        raise ArgumentError("need at least 3 levels")
    s2 = correlation_sums(field_, levels)
    if np.any(s2 <= 0):
        return DimensionEstimate(0.0, float("nan"), float("inf"), levels, "correlation", flags=["zero mass"])
    x = -np.asarray(levels, float) * math.log(field_.grid.b)
    s, c, se = _fit(x, np.log(s2))
    return DimensionEstimate(s, c, se, levels, "correlation", table={"log_delta": x.tolist(), "log_S2": np.log(s2).tolist()})


def correlation_dim_from_sums(sums: np.ndarray, levels: Sequence[int], b: int, mode: str = "mean") -> DimensionEstimate:
    """Fit from per-sample correlation sums of shape (S, len(levels))."""
    levels = list(levels)
    sums = np.atleast_2d(np.asarray(sums, dtype=float))
    x = -np.asarray(levels, float) * math.log(b)
    if mode == "mean":
        s2 = sums.mean(axis=0)
        s, c, se = _fit(x, np.log(s2))
        return DimensionEstimate(s, c, se, levels, "correlation", sums.shape[0],
                                 table={"log_delta": x.tolist(), "log_S2": np.log(s2).tolist()})
    if mode != "pathwise":
        raise ArgumentError(f"unknown mode {mode!r}")
    live = sums[np.all(sums > 0, axis=1)]
    if live.shape[0] == 0:
        raise ArgumentError("every sample had zero mass")
    sl = np.array([_fit(x, np.log(row))[0] for row in live])
    se = float(sl.std(ddof=1) / math.sqrt(sl.size)) if sl.size > 1 else float("inf")
    flags = [f"skipped {sums.shape[0] - live.shape[0]} zero-mass samples"] if live.shape[0] < sums.shape[0] else []
    return DimensionEstimate(float(sl.mean()), float("nan"), se, levels, "correlation", int(sl.size), flags,
                             {"slopes": sl.tolist()})


def correlation_dim_ensemble(fields: Sequence[DensityField], levels: Sequence[int], mode: str = "mean") -> DimensionEstimate:
    """Ensemble correlation dimension: fit log E[S_2] ("mean") or average per-sample slopes ("pathwise")."""
    fields = list(fields)
    sums = np.array([correlation_sums(f, levels) for f in fields])
    return correlation_dim_from_sums(sums, levels, fields[0].grid.b, mode)


def box_counts(mask: np.ndarray, b: int, levels: Sequence[int]) -> np.ndarray:
    mask = np.asarray(mask, bool)
    d = mask.ndim
    M = round(math.log(mask.shape[0], b))
    out = []
    for k in levels:
        if not 0 <= k <= M:
            raise ArgumentError(f"level {k} outside [0, {M}]")
        n, per = b**k, b ** (M - k)
        blocks = mask.reshape(sum(((n, per) for _ in range(d)), ()))
        occ = blocks.any(axis=tuple(range(1, 2 * d, 2)))
        out.append(int(occ.sum()))
    return np.asarray(out)


def box_dim_from_counts(counts, levels: Sequence[int], b: int = 2) -> DimensionEstimate:
    """Fit log N(b^-k) against k log b; ``counts`` may be (len(levels),) or (S, len(levels)).

    For an ensemble the slope is the mean of per-sample slopes over the
    non-empty masks.
    """
    levels = list(levels)
    if len(levels) < 2:
        raise ArgumentError("need at least 2 levels")
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    x = np.asarray(levels, float) * math.log(b)
    live = counts[np.all(counts > 0, axis=1)]
    n_empty = counts.shape[0] - live.shape[0]
    if live.shape[0] == 0:
        return DimensionEstimate(0.0, float("nan"), 0.0, levels, "box-count", counts.shape[0], ["empty mask"])
    flags = [f"{n_empty} empty masks"] if n_empty else []
    if live.shape[0] == 1:
        s, c, se = _fit(x, np.log(live[0]))
        return DimensionEstimate(s, c, se, levels, "box-count", 1, flags,
                                 {"log_inv_delta": x.tolist(), "log_count": np.log(live[0]).tolist()})
    sl = np.array([_fit(x, np.log(row))[0] for row in live])
    return DimensionEstimate(float(sl.mean()), float("nan"), float(sl.std(ddof=1) / math.sqrt(sl.size)), levels,
                             "box-count", int(sl.size), flags, {"slopes": sl.tolist()})


def box_dim_mask(mask: np.ndarray, levels: Sequence[int], b: int = 2) -> DimensionEstimate:
    levels = list(levels)
    if len(levels) < 2:
        raise ArgumentError("need at least 2 levels")
    return box_dim_from_counts(box_counts(mask, b, levels), levels, b)
