"""Procedurally drawn shape exemplars.

A tiny stand-in catalog for development and testing: twelve categories of
flat shapes rendered on a light background, each in several views whose mask
areas follow a constructed profile (so pose pruning has something to prune).
Twelve categories keep every difficulty level samplable (hard scenes draw up
to ten distinct categories).  Real product catalogs load through the manifest
format instead.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .catalog import CatalogEntry, ExemplarCatalog
from .geometry import BinaryMask, ExemplarImage

__all__ = ["SHAPE_NAMES", "make_shape_catalog"]

BACKGROUND_GRAY = 245

# Category id -> (name, fill color).
_PALETTE: dict[int, tuple[str, tuple[int, int, int]]] = {
    1: ("disk", (204, 51, 51)),
    2: ("square", (51, 102, 204)),
    3: ("triangle", (51, 153, 51)),
    4: ("ring", (204, 153, 0)),
    5: ("ellipse", (153, 51, 204)),
    6: ("diamond", (0, 153, 153)),
    7: ("cross", (204, 102, 0)),
    8: ("hexagon", (102, 102, 102)),
    9: ("bar", (153, 0, 51)),
    10: ("crescent", (0, 102, 51)),
    11: ("star", (51, 51, 153)),
    12: ("trapezoid", (153, 102, 51)),
}

SHAPE_NAMES = {category: name for category, (name, _) in _PALETTE.items()}

_SQRT3_HALF = math.sqrt(3.0) / 2.0


def _disk(u, v, s):
    return u * u + v * v <= (0.75 * s) ** 2


def _square(u, v, s):
    return np.maximum(np.abs(u), np.abs(v)) <= 0.7 * s


def _triangle(u, v, s):
    return (v <= 0.7 * s) & (np.abs(u) <= 0.8 * (v + 0.8 * s) / 1.5)


def _ring(u, v, s):
    rr = u * u + v * v
    return (rr <= (0.8 * s) ** 2) & (rr >= (0.45 * s) ** 2)


def _ellipse(u, v, s):
    return (u / (0.85 * s)) ** 2 + (v / (0.5 * s)) ** 2 <= 1.0


def _diamond(u, v, s):
    return np.abs(u) + np.abs(v) <= 0.8 * s


def _cross(u, v, s):
    arm = 0.25 * s
    length = 0.8 * s
    return ((np.abs(u) <= arm) & (np.abs(v) <= length)) | (
        (np.abs(v) <= arm) & (np.abs(u) <= length)
    )


def _hexagon(u, v, s):
    return np.maximum(np.abs(u), np.abs(u) / 2 + _SQRT3_HALF * np.abs(v)) <= 0.75 * s


def _bar(u, v, s):
    return (np.abs(u) <= 0.85 * s) & (np.abs(v) <= 0.35 * s)


def _crescent(u, v, s):
    outer = u * u + v * v <= (0.75 * s) ** 2
    bite = (u - 0.35 * s) ** 2 + v * v <= (0.6 * s) ** 2
    return outer & ~bite


def _star(u, v, s):
    p = 0.55
    return np.abs(u) ** p + np.abs(v) ** p <= (0.85 * s) ** p


def _trapezoid(u, v, s):
    half_width = s * (0.35 + 0.45 * np.clip(v / s + 0.6, 0.0, 1.2) / 1.2)
    return (np.abs(v) <= 0.6 * s) & (np.abs(u) <= half_width)


_SHAPES: dict[int, Callable] = {
    1: _disk,
    2: _square,
    3: _triangle,
    4: _ring,
    5: _ellipse,
    6: _diamond,
    7: _cross,
    8: _hexagon,
    9: _bar,
    10: _crescent,
    11: _star,
    12: _trapezoid,
}


def _render(category: int, view: int, size: int, area_fraction: float) -> ExemplarImage:
    half = (size - 1) / 2.0
    coords = (np.arange(size) - half) / half
    u = coords[None, :]
    v = coords[:, None]
    linear = math.sqrt(area_fraction)
    bits = np.broadcast_to(_SHAPES[category](u, v, linear), (size, size)).copy()

    _, color = _PALETTE[category]
    shade = 0.85 + 0.05 * (view % 4)
    pixels = np.full((size, size, 3), BACKGROUND_GRAY, dtype=np.uint8)
    pixels[bits] = np.clip(np.array(color) * shade, 0, 255).astype(np.uint8)
    return ExemplarImage(
        category=category, view=view, pixels=pixels, mask=BinaryMask(bits)
    )


def make_shape_catalog(
    size: int = 96,
    area_profile: Sequence[float] = (1.0, 0.8, 0.6, 0.3),
    categories: Sequence[int] | None = None,
) -> ExemplarCatalog:
    """Build the shape catalog: one view per area-profile entry per category.

    The first profile entry should be 1.0 so each category has a maximal view.
    """
    if not area_profile:
        raise ValueError("area_profile must be non-empty")
    if any(not (0 < f <= 1) for f in area_profile):
        raise ValueError("area fractions must lie in (0, 1]")
    chosen = sorted(categories) if categories is not None else sorted(_SHAPES)
    unknown = set(chosen) - set(_SHAPES)
    if unknown:
        raise ValueError(f"unknown shape categories: {sorted(unknown)}")
    entries = []
    for category in chosen:
        for view, fraction in enumerate(area_profile):
            exemplar = _render(category, view, size, fraction)
            entries.append(
                CatalogEntry(exemplar=exemplar, area=exemplar.mask.area)
            )
    return ExemplarCatalog(entries)
