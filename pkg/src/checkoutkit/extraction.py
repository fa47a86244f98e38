"""Foreground mask extraction from isolated-item exemplar photos.

The pipeline is edge detection, confidence thresholding, morphological
closing, hole filling, small-component removal, and median smoothing.  A
pluggable refiner hook (identity by default) allows a stronger segmentation
model to post-process the coarse mask.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import ndimage

from .geometry import BinaryMask, ExemplarImage

__all__ = [
    "EdgeDetector",
    "EdgeMap",
    "MaskRefiner",
    "MorphParams",
    "coarse_mask",
    "cut_exemplar",
    "extract_edges",
    "extract_mask",
    "refine_mask",
    "sobel_edges",
]

# Callable signatures for the pluggable stages.
EdgeDetector = Callable[[np.ndarray], np.ndarray]
MaskRefiner = Callable[[ExemplarImage, BinaryMask], BinaryMask]


@dataclass(frozen=True, eq=False)
class EdgeMap:
    """Per-pixel edge confidence in [0, 1], same grid as the source image."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"edge map must be a non-empty 2-D grid, got {values.shape}")
        if values.min() < 0 or values.max() > 1:
            raise ValueError("edge confidences must lie in [0, 1]")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MorphParams:
    """Tunables for the coarse-mask pipeline.

    ``min_component_area`` of None resolves to ``min_area_frac`` of the image
    area at use time.  Radii are in pixels; structuring elements are discrete
    disks, so radius 0 disables a stage.
    """

    edge_threshold: float = 0.1
    dilate_radius: int = 3
    erode_radius: int = 3
    min_component_area: int | None = None
    min_area_frac: float = 0.001
    median_radius: int = 2

    def __post_init__(self) -> None:
        if not (0.0 <= self.edge_threshold <= 1.0):
            raise ValueError(f"edge_threshold must be in [0, 1], got {self.edge_threshold}")
        if self.dilate_radius < 0 or self.erode_radius < 0 or self.median_radius < 0:
            raise ValueError("radii must be >= 0")
        if self.min_component_area is not None and self.min_component_area < 0:
            raise ValueError("min_component_area must be >= 0")
        if self.min_area_frac < 0:
            raise ValueError("min_area_frac must be >= 0")

    def resolve_min_area(self, width: int, height: int) -> int:
        if self.min_component_area is not None:
            return self.min_component_area
        return int(round(self.min_area_frac * width * height))


def _disk(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    return (span[None, :] ** 2 + span[:, None] ** 2) <= radius * radius


def _to_grayscale(pixels: np.ndarray) -> np.ndarray:
    rgb = pixels.astype(np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def sobel_edges(pixels: np.ndarray) -> np.ndarray:
    """Normalized Sobel gradient magnitude of the grayscale image.

    Constant images produce an all-zero map; otherwise the strongest gradient
    maps to confidence 1.
    """
    gray = _to_grayscale(pixels)
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    magnitude = np.hypot(gx, gy)
    peak = magnitude.max()
    if peak > 0:
        magnitude /= peak
    return magnitude


def extract_edges(
    image: ExemplarImage, detector: EdgeDetector | None = None
) -> EdgeMap:
    """Run the edge detector (default: Sobel magnitude) over an exemplar."""
    detector = detector or sobel_edges
    values = np.asarray(detector(image.pixels), dtype=np.float64)
    if values.shape != image.pixels.shape[:2]:
        raise ValueError(
            f"edge detector returned shape {values.shape} for image "
            f"{image.pixels.shape[:2]}"
        )
    return EdgeMap(values)


def coarse_mask(edges: EdgeMap, params: MorphParams | None = None) -> BinaryMask:
    """Threshold, close, fill, de-speckle, and smooth an edge map into a mask.

    Stages, in order: (1) keep edges with confidence >= the threshold;
    (2) morphological closing (dilate then erode) with disk elements;
    (3) fill background regions not connected to the image border;
    (4) drop foreground components smaller than the minimum area;
    (5) median-filter with a disk window.
    """
    params = params or MorphParams()
    mask = edges.values >= params.edge_threshold

    if params.dilate_radius > 0:
        mask = ndimage.binary_dilation(mask, structure=_disk(params.dilate_radius))
    if params.erode_radius > 0:
        # border_value=1 keeps the closing from eating border-touching
        # foreground (an exemplar cropped at the frame keeps its rim).
        mask = ndimage.binary_erosion(
            mask, structure=_disk(params.erode_radius), border_value=1
        )

    mask = ndimage.binary_fill_holes(mask)

    min_area = params.resolve_min_area(edges.width, edges.height)
    if min_area > 0 and mask.any():
        labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
        sizes = np.bincount(labels.ravel(), minlength=count + 1)
        keep = sizes >= min_area
        keep[0] = False
        mask = keep[labels]

    if params.median_radius > 0:
        footprint = _disk(params.median_radius)
        mask = ndimage.median_filter(mask.astype(np.uint8), footprint=footprint) > 0
    return BinaryMask(mask)


def refine_mask(
    image: ExemplarImage, coarse: BinaryMask, refiner: MaskRefiner | None = None
) -> BinaryMask:
    """Hand the coarse mask to a refiner; the default refiner is the identity."""
    if (coarse.height, coarse.width) != image.pixels.shape[:2]:
        raise ValueError("coarse mask dimensions do not match the image")
    if refiner is None:
        return coarse
    refined = refiner(image, coarse)
    if (refined.width, refined.height) != (coarse.width, coarse.height):
        raise ValueError(
            f"refiner changed mask dimensions from {coarse.width}x{coarse.height} "
            f"to {refined.width}x{refined.height}"
        )
    return refined


def cut_exemplar(image: ExemplarImage, mask: BinaryMask) -> ExemplarImage:
    """Attach a foreground mask to an exemplar; outside pixels become transparent."""
    if (mask.height, mask.width) != image.pixels.shape[:2]:
        raise ValueError("mask dimensions do not match the image")
    if mask.area == 0:
        raise ValueError("cannot cut an exemplar with an empty mask")
    return replace(image, mask=mask)


def extract_mask(
    image: ExemplarImage,
    params: MorphParams | None = None,
    detector: EdgeDetector | None = None,
    refiner: MaskRefiner | None = None,
) -> BinaryMask:
    """Full extraction: edges, coarse mask, then the refinement hook."""
    edges = extract_edges(image, detector)
    coarse = coarse_mask(edges, params)
    return refine_mask(image, coarse, refiner)
