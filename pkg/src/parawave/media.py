"""Layered heterogeneous coefficient fields c(z_k, x).

Coefficients are stored piecewise constant per fine cell, one row per z-level.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridHierarchy


@dataclass(frozen=True)
class MediumField:
    """Per-layer, per-fine-cell coefficient values.

    ``values`` has shape ``(K + 1, n_cells)``; row ``k`` is the medium at
    ``z_k = z0 + k * dz``.
    """

    values: np.ndarray
    dz: float
    z0: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError("values must be a (layers, cells) array")
        if not np.all(values > 0):
            raise ValueError("coefficient values must be strictly positive")
        if not self.dz > 0:
            raise ValueError("dz must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_layers(self) -> int:
        """K + 1."""
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    @property
    def c_max(self) -> float:
        return float(self.values.max())

    def z(self, k: int) -> float:
        return self.z0 + k * self.dz

    def layer(self, k: int) -> np.ndarray:
        return sample_layer(self, k)


def sample_layer(field: MediumField, k: int) -> np.ndarray:
    """Read-only per-cell coefficients of layer ``k``."""
    if int(k) != k or not 0 <= k <= field.K:
        raise IndexError(f"layer {k!r} outside [0, {field.K}]")
    return field.values[int(k)]


def layered_field(
    grid: GridHierarchy,
    pattern,
    contrasts,
    layer_boundaries,
    background: float = 1.0,
    dz: float = 1.0,
    z0: float = 0.0,
) -> MediumField:
    """Same binary pattern in every layer, contrast constant within z-bands.

    ``layer_boundaries`` lists ``len(contrasts) + 1`` strictly increasing
    layer indices ``b_0 = 0 < b_1 < ... < b_J``; band ``j`` covers layers
    ``b_j <= k < b_{j+1}`` and the field has ``b_J`` layers in total.
    """
    pattern = np.asarray(pattern).ravel()
    if pattern.size != grid.n_cells:
        raise ValueError(f"pattern has {pattern.size} cells, grid has {grid.n_cells}")
    mask = pattern.astype(bool)
    contrasts = [float(c) for c in contrasts]
    bounds = [int(b) for b in layer_boundaries]
    if len(bounds) != len(contrasts) + 1:
        raise ValueError("need exactly one more layer boundary than contrasts")
    if bounds[0] != 0 or np.any(np.diff(bounds) <= 0):
        raise ValueError("layer boundaries must start at 0 and be strictly increasing")
    if min(contrasts + [background]) <= 0:
        raise ValueError("contrasts and background must be positive")

    values = np.full((bounds[-1], grid.n_cells), float(background))
    for j, value in enumerate(contrasts):
        values[bounds[j] : bounds[j + 1], mask] = value
    return MediumField(values, dz=dz, z0=z0)


def equal_bands(n_layers: int, n_bands: int) -> list[int]:
    """Boundaries splitting ``n_layers`` levels into ``n_bands`` near-equal bands."""
    if n_bands > n_layers:
        raise ValueError("more bands than layers")
    return [int(b) for b in np.linspace(0, n_layers, n_bands + 1).round()]


def band_representatives(layer_boundaries) -> list[int]:
    """First layer of each band."""
    return [int(b) for b in layer_boundaries[:-1]]


def experiment1_pattern(grid: GridHierarchy) -> np.ndarray:
    """Binary channel/inclusion mask on the unit square.

    Four thin horizontal channels crossing most of the domain plus a lattice
    of small square inclusions; features are sized relative to the domain so
    the same picture appears at every resolution.
    """
    x, y = grid.cell_centers.T
    mask = np.zeros(grid.n_cells, dtype=bool)
    width = 0.03
    for yc, (xa, xb) in zip((0.2, 0.4, 0.6, 0.8), ((0.1, 0.9), (0.05, 0.75), (0.25, 0.95), (0.1, 0.9))):
        mask |= (np.abs(y - yc) < width) & (x > xa) & (x < xb)
    for xc in (0.15, 0.35, 0.55, 0.75):
        for yc in (0.3, 0.7):
            mask |= (np.abs(x - xc) < 0.04) & (np.abs(y - yc) < 0.04)
    return mask.astype(np.int8)


# -- rasters ----------------------------------------------------------------


def write_raster(path, data) -> None:
    """Plain text raster: header ``rows cols`` then row-major whitespace floats."""
    data = np.asarray(data, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{data.shape[0]} {data.shape[1]}\n")
        np.savetxt(fh, data, fmt="%.17g")


def read_raster(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path) as fh:
            header = fh.readline().split()
            rows, cols = int(header[0]), int(header[1])
            data = np.loadtxt(fh, ndmin=2)
    except (OSError, ValueError, IndexError) as exc:
        raise ValueError(f"cannot read raster {path}: {exc}") from exc
    if data.size != rows * cols:
        raise ValueError(f"raster {path} declares {rows}x{cols} but holds {data.size} values")
    return data.reshape(rows, cols)


def subsample_raster(raster, target_grid: GridHierarchy, rng) -> np.ndarray:
    """Pick one random source value per block; returns per-fine-cell values.

    Raster row 0 is the top of the domain (x2 = 1), as in an image.
    """
    raster = np.asarray(raster, dtype=float)
    rows, cols = raster.shape
    n = target_grid.n_fine
    if rows % n or cols % n:
        raise ValueError(f"raster {rows}x{cols} not divisible into {n}x{n} blocks")
    by, bx = rows // n, cols // n
    oy = rng.integers(0, by, size=(n, n))
    ox = rng.integers(0, bx, size=(n, n))
    r = np.arange(n)[:, None] * by + oy
    c = np.arange(n)[None, :] * bx + ox
    picked = raster[r, c]
    return picked[::-1].ravel()


def load_raster(
    path,
    source_size,
    target_grid: GridHierarchy,
    seed: int,
    layers: int,
    dz: float = 1.0,
    z0: float = 0.0,
    fresh_per_layer: bool = True,
) -> MediumField:
    """Subsampled raster medium, one independent draw per layer by default.

    Layer ``k`` uses generator seed ``seed + k``; with
    ``fresh_per_layer=False`` every layer reuses the layer-0 draw.
    """
    raster = read_raster(path)
    if tuple(raster.shape) != tuple(source_size):
        raise ValueError(f"raster is {raster.shape}, expected {tuple(source_size)}")
    return field_from_raster(raster, target_grid, seed, layers, dz, z0, fresh_per_layer)


def field_from_raster(raster, target_grid, seed, layers, dz=1.0, z0=0.0, fresh_per_layer=True):
    raster = np.asarray(raster, dtype=float)
    if not np.all(raster > 0):
        raise ValueError("raster values must be strictly positive")
    values = np.empty((layers, target_grid.n_cells))
    for k in range(layers):
        if k == 0 or fresh_per_layer:
            values[k] = subsample_raster(raster, target_grid, np.random.default_rng(seed + k))
        else:
            values[k] = values[0]
    return MediumField(values, dz=dz, z0=z0)


def synthetic_marmousi(shape=(600, 600), seed: int = 0) -> np.ndarray:
    """Marmousi-like velocity raster (row 0 = surface).

    A background increasing with depth, a stack of dipping layers whose
    velocities alternate strongly, one normal fault offsetting them, and
    fine-scale noise.  Values lie roughly in [1.5, 5.5].
    """
    rng = np.random.default_rng(seed)
    rows, cols = shape
    depth = np.linspace(0.0, 1.0, rows)[:, None]
    xs = np.linspace(0.0, 1.0, cols)[None, :]
    fault = 0.45 + 0.25 * depth
    throw = np.where(xs > fault, 0.06, 0.0)
    surface = depth - 0.35 * xs + 0.08 * np.sin(5.0 * xs) - throw
    n_strata = 22
    strata = np.floor((surface + 0.4) * n_strata).astype(int)
    layer_speed = rng.uniform(-1.0, 1.0, size=strata.max() - strata.min() + 1)
    vel = 1.5 + 2.4 * depth + 0.9 * layer_speed[strata - strata.min()]
    vel += 0.05 * rng.standard_normal(shape)
    return np.clip(vel, 1.5, 5.5)
