"""b-adic grids, density fields and deterministic random streams.

A finite-level chaos measure mu_m is stored as its density against Lebesgue
measure, sampled on the cells of a regular b-adic grid of [0,1)^d.  Values
live in an ndarray of shape (b^M,)*d indexed row-major by the cell
multi-index.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ContractViolation, ResourceLimitError

# Maximum number of cells in a grid; override with MCHAOS_MAX_CELLS.
DEFAULT_MAX_CELLS = 2**24


def max_cells() -> int:
    return int(os.environ.get("MCHAOS_MAX_CELLS", DEFAULT_MAX_CELLS))


@dataclass(frozen=True)
class BAdicGrid:
    d: int
    b: int
    level: int

    @property
    def cells_per_axis(self) -> int:
        return self.b**self.level

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**self.d

    @property
    def width(self) -> float:
        return float(self.b) ** (-self.level)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.d

    def centers_1d(self) -> np.ndarray:
        return (np.arange(self.cells_per_axis) + 0.5) * self.width

    def centers(self) -> np.ndarray:
        """Cell centers, shape (n_cells, d), row-major order."""
        axes = np.meshgrid(*([self.centers_1d()] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)


def make_grid(d: int, b: int, M: int) -> BAdicGrid:
    if int(d) != d or d < 1:
        raise ArgumentError(f"d must be an integer >= 1, got {d}")
    if int(b) != b or b < 2:
        raise ArgumentError(f"b must be an integer >= 2, got {b}")
    if int(M) != M or M < 0:
        raise ArgumentError(f"level M must be an integer >= 0, got {M}")
    limit = max_cells()
    # compare exponents first so huge M never builds a huge integer
    if d * M * np.log2(b) > np.log2(limit) + 1e-9 or b ** (d * M) > limit:
        raise ResourceLimitError(
            f"grid with b^(dM) = {b}^{d * M} cells exceeds the cell budget "
            f"max_cells={limit} (set MCHAOS_MAX_CELLS to change it)"
        )
    return BAdicGrid(int(d), int(b), int(M))


def min_vertex(grid: BAdicGrid, index) -> np.ndarray:
    """Minimum vertex of the cell with 0-based multi-index ``index``."""
    idx = np.atleast_1d(np.asarray(index))
    if idx.shape != (grid.d,) or not np.issubdtype(idx.dtype, np.integer):
        raise ArgumentError(f"index must be {grid.d} integers, got {index!r}")
    if np.any(idx < 0) or np.any(idx >= grid.cells_per_axis):
        raise ArgumentError(
            f"index {tuple(idx)} out of range [0, {grid.cells_per_axis})"
        )
    return idx / grid.cells_per_axis


@dataclass(frozen=True)
class DensityField:
    """Cell values of prod_{j<=m} P_j.  ``m = -1`` means no layer applied."""

    grid: BAdicGrid
    values: np.ndarray
    m: int = -1
    seed_path: tuple = field(default=(), compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ArgumentError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ContractViolation("density values must be finite and >= 0")
        if self.m > self.grid.level:
            raise ContractViolation(
                f"level m={self.m} finer than grid level {self.grid.level}"
            )
        if v.flags.writeable:
            v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def lebesgue(grid: BAdicGrid) -> DensityField:
    return DensityField(grid, np.ones(grid.shape), m=-1)


def _checked_layer(field_: DensityField, layer_values) -> np.ndarray:
    lv = np.asarray(getattr(layer_values, "values", layer_values), dtype=np.float64)
    lgrid = getattr(layer_values, "grid", None)
    if (lgrid is not None and lgrid != field_.grid) or lv.shape != field_.grid.shape:
        raise ArgumentError("layer is not defined on the field's grid")
    if np.any(lv < 0):
        raise ContractViolation(f"negative layer value {lv.min()}")
    return lv


def multiply_layer(field_: DensityField, layer_values) -> DensityField:
    lv = _checked_layer(field_, layer_values)
    return DensityField(field_.grid, field_.values * lv, field_.m + 1, field_.seed_path)


def total_mass(field_: DensityField) -> float:
    return float(field_.values.sum() * field_.grid.width**field_.grid.d)


def coarsen(values: np.ndarray, b: int, levels: int = 1) -> np.ndarray:
    """Average b^d blocks of cells, ``levels`` times."""
    v = np.asarray(values)
    d = v.ndim
    for _ in range(levels):
        n = v.shape[0] // b
        v = v.reshape(sum(((n, b) for _ in range(d)), ())).mean(axis=tuple(range(1, 2 * d, 2)))
    return v


def coarsen_field(field_: DensityField, level: int) -> DensityField:
    g = field_.grid
    if not 0 <= level <= g.level:
        raise ArgumentError(f"cannot coarsen level {g.level} to {level}")
    vals = coarsen(field_.values, g.b, g.level - level)
    return DensityField(make_grid(g.d, g.b, level), vals, min(field_.m, level), field_.seed_path)


# --- random streams -------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    master_seed: int
    path: tuple[int, int, int]

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.master_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def rng_stream(master_seed: int, sample_id: int, layer_id: int, substream_id: int = 0) -> RngStream:
    path = (int(sample_id), int(layer_id), int(substream_id))
    if min(path) < 0 or master_seed < 0:
        raise ArgumentError("seed and path components must be non-negative")
    return RngStream(int(master_seed) & (2**64 - 1), path)


def make_rng(master_seed: int, sample_id: int, layer_id: int, substream_id: int = 0) -> np.random.Generator:
    return rng_stream(master_seed, sample_id, layer_id, substream_id).generator()


# --- serialization --------------------------------------------------------

def save_field(field_: DensityField, stem) -> tuple[Path, Path]:
    stem = Path(stem)
    binp, hdrp = stem.with_suffix(".bin"), stem.with_suffix(".json")
    np.ascontiguousarray(field_.values, dtype="<f8").tofile(binp)
    g = field_.grid
    hdr = {"d": g.d, "b": g.b, "level": g.level, "m": field_.m, "seed_path": list(field_.seed_path)}
    hdrp.write_text(json.dumps(hdr, sort_keys=True) + "\n")
    return binp, hdrp


def load_field(stem) -> DensityField:
    stem = Path(stem)
    hdr = json.loads(stem.with_suffix(".json").read_text())
    grid = make_grid(hdr["d"], hdr["b"], hdr["level"])
    vals = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").reshape(grid.shape)
    return DensityField(grid, vals, hdr["m"], tuple(hdr.get("seed_path", ())))


def save_mask(mask: np.ndarray, grid: BAdicGrid, stem) -> tuple[Path, Path]:
    stem = Path(stem)
    binp, hdrp = stem.with_suffix(".mask"), stem.with_suffix(".mask.json")
    np.packbits(np.asarray(mask, dtype=bool).ravel()).tofile(binp)
    hdr = {"d": grid.d, "b": grid.b, "level": grid.level, "count": int(np.count_nonzero(mask))}
    hdrp.write_text(json.dumps(hdr, sort_keys=True) + "\n")
    return binp, hdrp


def load_mask(stem) -> tuple[np.ndarray, BAdicGrid]:
    stem = Path(stem)
    hdr = json.loads(stem.with_suffix(".mask.json").read_text())
    grid = make_grid(hdr["d"], hdr["b"], hdr["level"])
    bits = np.fromfile(stem.with_suffix(".mask"), dtype=np.uint8)
    return np.unpackbits(bits, count=grid.n_cells).astype(bool).reshape(grid.shape), grid
