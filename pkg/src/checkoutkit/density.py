"""Instance-count density maps at 1/8 input resolution.

Ground truth places one normalized Gaussian bump per instance center, so the
map's total mass equals the instance count exactly.  Bumps are truncated at a
configurable radius and renormalized, which keeps the identity intact for
centers near the image border.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DENSITY_STRIDE",
    "DensityMap",
    "KernelParams",
    "count_from_density",
    "generate_density",
    "read_density_map",
    "round_count",
    "write_density_map",
]

DENSITY_STRIDE = 8

_DMAP_MAGIC = b"DMAP"
_DMAP_VERSION = 1


@dataclass(frozen=True, eq=False)
class DensityMap:
    """Nonnegative grid of density cells, one cell per 8x8 input pixels."""

    values: np.ndarray
    stride: int = DENSITY_STRIDE

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"density grid must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("density grid dimensions must be positive")
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DensityMap):
            return NotImplemented
        return (
            self.stride == other.stride
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    @classmethod
    def grid_shape(cls, image_size: tuple[int, int]) -> tuple[int, int]:
        """Cell grid (width, height) covering an image without losing pixels."""
        width, height = image_size
        return (
            math.ceil(width / DENSITY_STRIDE),
            math.ceil(height / DENSITY_STRIDE),
        )


@dataclass(frozen=True)
class KernelParams:
    """Gaussian bump parameters, all in density-cell units."""

    sigma: float = 2.0
    truncation_radius: float = 8.0
    adaptive: bool = False
    adaptive_beta: float = 0.3
    adaptive_neighbors: int = 3
    sigma_min: float = 0.5
    sigma_max: float = 4.0

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.truncation_radius < 3 * self.sigma:
            raise ValueError(
                f"truncation_radius {self.truncation_radius} must be >= 3*sigma "
                f"({3 * self.sigma})"
            )
        if not (0 < self.sigma_min <= self.sigma_max):
            raise ValueError("need 0 < sigma_min <= sigma_max")


def _adaptive_sigmas(
    centers: np.ndarray, params: KernelParams
) -> np.ndarray:
    """Per-center sigma from mean distance to the nearest other centers."""
    n = centers.shape[0]
    sigmas = np.full(n, params.sigma)
    if n < 2:
        return sigmas
    k = min(params.adaptive_neighbors, n - 1)
    diffs = centers[:, None, :] - centers[None, :, :]
    dists = np.hypot(diffs[..., 0], diffs[..., 1])
    np.fill_diagonal(dists, np.inf)
    nearest = np.sort(dists, axis=1)[:, :k]
    cell_dist = nearest.mean(axis=1) / DENSITY_STRIDE
    sigmas = params.adaptive_beta * cell_dist
    return np.clip(sigmas, params.sigma_min, params.sigma_max)


def generate_density(
    centers: Sequence[tuple[float, float]],
    image_size: tuple[int, int],
    params: KernelParams | None = None,
) -> DensityMap:
    """Build a ground-truth density map from instance centers.

    Each center (cx, cy), given in image pixels, contributes one Gaussian
    bump at cell coordinates (cx/8, cy/8), truncated at the configured radius
    and renormalized to sum to exactly 1.  The returned map therefore sums to
    the number of centers.
    """
    params = params or KernelParams()
    width, height = image_size
    if width < 1 or height < 1:
        raise ValueError(f"image dimensions must be positive, got {image_size}")
    grid_w, grid_h = DensityMap.grid_shape(image_size)
    values = np.zeros((grid_h, grid_w), dtype=np.float64)
    if not centers:
        return DensityMap(values)

    points = np.asarray(centers, dtype=np.float64)
    for cx, cy in points:
        if not (0 <= cx < width and 0 <= cy < height):
            raise ValueError(
                f"center ({cx}, {cy}) lies outside the {width}x{height} image"
            )

    sigmas = (
        _adaptive_sigmas(points, params)
        if params.adaptive
        else np.full(points.shape[0], params.sigma)
    )

    for (cx, cy), sigma in zip(points, sigmas):
        u = cx / DENSITY_STRIDE
        v = cy / DENSITY_STRIDE
        radius = max(params.truncation_radius, 3.0 * sigma)
        x0 = max(0, int(math.floor(u - radius)))
        x1 = min(grid_w, int(math.ceil(u + radius)) + 1)
        y0 = max(0, int(math.floor(v - radius)))
        y1 = min(grid_h, int(math.ceil(v + radius)) + 1)
        xs = np.arange(x0, x1, dtype=np.float64) - u
        ys = np.arange(y0, y1, dtype=np.float64) - v
        sq = xs[None, :] ** 2 + ys[:, None] ** 2
        bump = np.exp(-sq / (2.0 * sigma * sigma))
        bump[sq > radius * radius] = 0.0
        total = bump.sum()
        # The nearest cell is always in range, so the window sums positive.
        values[y0:y1, x0:x1] += bump / total
    return DensityMap(values)


def count_from_density(density: DensityMap) -> float:
    """Total mass of the map, the pre-rounding instance count."""
    return float(density.values.sum())


def round_count(count: float) -> int:
    """Round a nonnegative count to the nearest integer, halves up."""
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    return int(math.floor(count + 0.5))


def write_density_map(density: DensityMap, path: str | Path) -> None:
    """Serialize a density map to the binary DMAP format.

    Layout (little-endian): magic "DMAP", u32 version, u32 width, u32 height,
    then width*height IEEE-754 32-bit floats in row-major order.
    """
    payload = density.values.astype("<f4").tobytes(order="C")
    header = _DMAP_MAGIC + struct.pack(
        "<III", _DMAP_VERSION, density.width, density.height
    )
    Path(path).write_bytes(header + payload)


def read_density_map(path: str | Path) -> DensityMap:
    """Load a DMAP file; raises ValueError on any structural defect."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated DMAP header")
    if raw[:4] != _DMAP_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {_DMAP_MAGIC!r}")
    version, width, height = struct.unpack("<III", raw[4:16])
    if version != _DMAP_VERSION:
        raise ValueError(f"{path}: unsupported DMAP version {version}")
    expected = 16 + 4 * width * height
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size {len(raw) - 16} does not match "
            f"{width}x{height} grid"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(height, width)
    return DensityMap(values.astype(np.float64))
