"""Gaussian layers and finite-level GMC densities.

Each layer psi_j is a stationary centered Gaussian field with covariance
K_j, sampled at cell centers by circulant embedding: the sampled kernel is
wrapped on a torus large enough that (a) its periodization does not overlap
itself and (b) cells at opposite ends of [0,1)^d are further apart on the
torus than the kernel's support.  Then psi = irfftn(sqrt(lam) * rfftn(w)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .core import BAdicGrid, DensityField, lebesgue, make_grid, make_rng, multiply_layer
from .errors import ArgumentError, NumericError, ResourceLimitError
from .kernels import KernelDecomposition, LayerKernel, make_decomposition

EIG_TOL = 1e-8
DENSE_LIMIT = 4096  # max cells for dense remainder factorization


@dataclass(frozen=True)
class LayerField:
    grid: BAdicGrid
    j: int
    values: np.ndarray
    variance: float


@dataclass(frozen=True)
class GmcConfig:
    gamma: float
    d: int = 1
    b: int = 2
    m: int = 10
    grid_level: int | None = None
    kernel: str | None = None
    samples: int = 64
    bump: float = 1.0  # sharpness c of the Phi_h seed (star-scale only)

    def __post_init__(self):
        if not 0 <= self.gamma < math.sqrt(2 * self.d):
            raise ArgumentError(f"gamma={self.gamma} is not sub-critical (need gamma^2 < 2d)")
        if self.m < 0:
            raise ArgumentError("m must be >= 0")
        if self.grid_level is None:
            object.__setattr__(self, "grid_level", self.m + 2)
        if self.kernel is None:
            object.__setattr__(self, "kernel", "exact-log" if self.d == 1 else "star-scale")
        if self.grid_level < self.m:
            raise ArgumentError("grid_level must be >= m")


def _embedding_size(n: int, support_cells: int) -> int:
    return sfft.next_fast_len(max(n + support_cells, 2 * support_cells), real=True)


@lru_cache(maxsize=128)
def layer_factor(layer: LayerKernel, grid: BAdicGrid):
    """sqrt of the circulant spectrum for ``layer`` on ``grid`` (None -> iid cells)."""
    delta = grid.width
    rc = math.ceil(layer.support_radius / delta - 1e-12)
    if rc <= 1:
        return None
    N = _embedding_size(grid.cells_per_axis, rc)
    k = np.arange(N)
    off = np.where(k < N - k, k, k - N) * delta
    if grid.d == 1:
        c = np.asarray(layer.radial(np.abs(off)), dtype=float)
    else:
        mesh = np.meshgrid(*([off] * grid.d), indexing="ij", sparse=True)
        r = np.sqrt(sum(x * x for x in mesh))
        c = np.asarray(layer.radial(r), dtype=float)
    lam = sfft.rfftn(c).real
    top = float(lam.max()) if lam.size else 0.0
    low = float(lam.min()) if lam.size else 0.0
    if low < -EIG_TOL * max(top, 0.0):
        raise NumericError(
            f"layer {layer.j} kernel is not PSD on the embedding: worst eigenvalue {low:.3e} (max {top:.3e})",
            worst=low,
        )
    sq = np.sqrt(np.maximum(lam, 0.0))
    sq.flags.writeable = False
    return sq, (N,) * grid.d


def sample_layer(layer: LayerKernel, grid: BAdicGrid, rng: np.random.Generator) -> LayerField:
    fac = layer_factor(layer, grid)
    if fac is None:
        # support within one cell: centers are uncorrelated
        vals = rng.standard_normal(grid.shape) * math.sqrt(layer.k0)
    else:
        sq, shape = fac
        w = rng.standard_normal(shape)
        full = sfft.irfftn(sq * sfft.rfftn(w), s=shape)
        vals = full[tuple(slice(0, n) for n in grid.shape)].copy()
    return LayerField(grid, layer.j, vals, float(layer.k0))


def _exp_layer(x, var, gamma):
    return np.exp(gamma * x - 0.5 * gamma**2 * var)


def exponentiate_layer(layer_field: LayerField, gamma: float) -> np.ndarray:
    if gamma == 0:
        return np.ones(layer_field.grid.shape)
    return _exp_layer(layer_field.values, layer_field.variance, gamma)


@dataclass(frozen=True)
class Remainder:
    factor: np.ndarray  # n_cells x n_cells, R = F F^T
    diag: np.ndarray    # R(t, t) per cell, grid shaped


class GmcSampler:
    """Draws mu_m = prod_{j<=m} exp(gamma psi_j - gamma^2 K_j(0)/2) dt on a grid."""

    def __init__(self, config: GmcConfig, decomposition: KernelDecomposition | None = None,
                 remainder: Remainder | None = None):
        self.config = config
        self.grid = make_grid(config.d, config.b, config.grid_level)
        self.decomposition = decomposition or make_decomposition(config.kernel, config.b, config.d, bump_c=config.bump)
        if self.decomposition.b != config.b or self.decomposition.d != config.d:
            raise ArgumentError("decomposition does not match config (b, d)")
        self.layers = [self.decomposition.layer(j) for j in range(config.m + 1)]
        self.remainder = remainder

    def layer_field(self, j: int, seed: int, sample_id: int) -> LayerField:
        return sample_layer(self.layers[j], self.grid, make_rng(seed, sample_id, j, 0))

    def sample(self, seed: int, sample_id: int = 0) -> DensityField:
        g = self.config.gamma
        f = lebesgue(self.grid)
        f = DensityField(f.grid, f.values, f.m, (int(seed), int(sample_id)))
        for j in range(self.config.m + 1):
            lf = self.layer_field(j, seed, sample_id)
            if j == 0 and self.remainder is not None:
                z = self.remainder.factor @ make_rng(seed, sample_id, 0, 1).standard_normal(self.grid.n_cells)
                vals = _exp_layer(lf.values + z.reshape(self.grid.shape), lf.variance + self.remainder.diag, g)
            else:
                vals = exponentiate_layer(lf, g)
            f = multiply_layer(f, vals)
        return f


@lru_cache(maxsize=16)
def _cached_sampler(config: GmcConfig) -> GmcSampler:
    return GmcSampler(config)


def sample_gmc(config: GmcConfig, seed: int, sample_id: int = 0) -> DensityField:
    """Pure function of (config, seed, sample_id)."""
    return _cached_sampler(config).sample(seed, sample_id)


def augment_layer0(sampler: GmcSampler, R, tol: float = EIG_TOL) -> GmcSampler:
    """Sampler whose layer 0 is psi_0 + Z with Cov(Z) = R on the cell centers.

    ``R(t, s)`` is a two-point evaluator (see kernels.remainder_kernel).
    """
    grid = sampler.grid
    if grid.n_cells > DENSE_LIMIT:
        raise ResourceLimitError(f"dense remainder needs <= {DENSE_LIMIT} cells, grid has {grid.n_cells}")
    x = grid.centers()
    mat = np.asarray(R(x[:, None, :], x[None, :, :]), dtype=float)
    mat = 0.5 * (mat + mat.T)
    lam, vec = np.linalg.eigh(mat)
    top = max(float(lam.max()), 0.0)
    if lam.min() < -tol * max(top, 1e-300) and lam.min() < -1e-14:
        raise NumericError(f"remainder kernel not PSD: worst eigenvalue {lam.min():.3e}", worst=float(lam.min()))
    factor = vec * np.sqrt(np.maximum(lam, 0.0))
    rem = Remainder(factor, np.diag(mat).reshape(grid.shape).copy())
    return GmcSampler(sampler.config, sampler.decomposition, rem)


def parity_independence_check(ensemble: np.ndarray, grid: BAdicGrid, j: int, max_pairs: int = 16,
                              z_crit: float = 3.0) -> dict:
    """Cross-covariance test between cells of the same parity class of level j.

    ``ensemble`` has shape (S, *grid.shape) and holds samples of psi_j.  For
    level-j cells I != I' sharing the parity class theta (index mod 2), the
    distance is at least b^{-j}; we take the closest pair of grid cells, one
    in each, and z-test their empirical covariance against 0.
    """
    if ensemble.shape[1:] != grid.shape:
        raise ArgumentError("ensemble does not match grid")
    if j > grid.level:
        raise ArgumentError("j finer than grid")
    S = ensemble.shape[0]
    b, d = grid.b, grid.d
    nj = b**j
    per = b ** (grid.level - j)  # grid cells per level-j cell per axis
    x = ensemble.reshape(S, -1) - ensemble.reshape(S, -1).mean(axis=0)
    pairs = []
    for k in range(nj):
        for step in range(2, nj, 2):
            if k + step >= nj or len(pairs) >= max_pairs:
                break
            # I = k, I' = k + step along axis 0; other axes at cell 0
            a = [k * per + per - 1] + [0] * (d - 1)
            c = [(k + step) * per] + [0] * (d - 1)
            pairs.append((tuple(a), tuple(c)))
    flat = np.ravel_multi_index
    rows = []
    max_z = 0.0
    for a, c in pairs:
        xa, xc = x[:, flat(a, grid.shape)], x[:, flat(c, grid.shape)]
        prod = xa * xc
        cov = float(prod.mean())
        se = float(prod.std(ddof=1) / math.sqrt(S))
        z = abs(cov) / se if se > 0 else 0.0
        max_z = max(max_z, z)
        rows.append({"cells": [list(a), list(c)], "cov": cov, "se": se, "z": z})
    same = float((x[:, 0] ** 2).mean())
    return {"pass": bool(max_z <= z_crit), "n_pairs": len(rows), "max_abs_z": max_z,
            "pairs": rows, "same_cell_variance": same}
