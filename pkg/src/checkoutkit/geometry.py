"""Core geometric types and raster primitives shared by the whole pipeline.

Coordinates are continuous with the origin at the top-left corner, x growing
rightward and y growing downward.  Masks are row-major boolean grids indexed
``bits[y, x]``; a set bit at (x, y) covers the unit square [x, x+1) x [y, y+1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

__all__ = [
    "AffinePose",
    "BBox",
    "BinaryMask",
    "Component",
    "Detection",
    "ExemplarImage",
    "connected_components",
    "iou",
    "mask_bbox",
    "mask_centroid",
    "transform_image",
    "transform_mask",
]

BACKGROUND_CATEGORY = 0


def _read_only(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Rasterized foreground mask over a positive-size pixel grid."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        if bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError("mask dimensions must be positive")
        if bits.dtype != np.bool_:
            bits = bits.astype(bool)
        object.__setattr__(self, "bits", _read_only(bits))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @cached_property
    def area(self) -> int:
        """Number of set bits (the mask's pixel area)."""
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(
            np.array_equal(self.bits, other.bits)
        )


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates, corner form."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(
                f"degenerate box ordering: ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def as_xywh(self) -> tuple[float, float, float, float]:
        return self.x_min, self.y_min, self.width, self.height

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True, eq=False)
class ExemplarImage:
    """A single isolated-item photo, keyed by (category, view).

    ``mask`` marks the foreground; pixels outside it are treated as
    transparent when the exemplar is composed into a scene.
    """

    category: int
    view: int
    pixels: np.ndarray
    mask: BinaryMask | None = None

    def __post_init__(self) -> None:
        if self.category < 0:
            raise ValueError("category id must be >= 0")
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError(f"pixels must be HxWx3, got shape {pixels.shape}")
        if pixels.dtype != np.uint8:
            pixels = pixels.astype(np.uint8)
        object.__setattr__(self, "pixels", _read_only(pixels))
        if self.mask is not None:
            if (self.mask.height, self.mask.width) != pixels.shape[:2]:
                raise ValueError(
                    f"mask {self.mask.width}x{self.mask.height} does not match "
                    f"image {pixels.shape[1]}x{pixels.shape[0]}"
                )

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class AffinePose:
    """Rotation (degrees), uniform scale, and pixel translation of a placement.

    Rotation is normalized into [0, 360).  The rotation/scale act about the
    source grid's center; translation shifts the result on the canvas.
    """

    rotation: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not (0.0 < self.scale <= 1.0):
            raise ValueError(f"scale must be in (0, 1], got {self.scale}")
        rotation = float(self.rotation) % 360.0
        object.__setattr__(self, "rotation", rotation)
        tx, ty = self.translation
        object.__setattr__(self, "translation", (float(tx), float(ty)))


@dataclass(frozen=True)
class Detection:
    """A scored, categorized box as produced by a detector (pre- or post-NMS)."""

    box: BBox
    category: int
    score: float

    def __post_init__(self) -> None:
        if self.category <= BACKGROUND_CATEGORY:
            raise ValueError("detections must carry a foreground category (> 0)")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def _inverse_source_coords(
    pose: AffinePose,
    source_size: tuple[int, int],
    xs: np.ndarray,
    ys: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Map canvas sample coordinates back to source pixel coordinates."""
    src_w, src_h = source_size
    cx = (src_w - 1) / 2.0
    cy = (src_h - 1) / 2.0
    tx, ty = pose.translation
    theta = math.radians(pose.rotation)
    cos_i = math.cos(-theta)
    sin_i = math.sin(-theta)
    dx = xs[None, :] - tx - cx
    dy = ys[:, None] - ty - cy
    px = (cos_i * dx - sin_i * dy) / pose.scale + cx
    py = (sin_i * dx + cos_i * dy) / pose.scale + cy
    return px, py


def _forward_window(
    pose: AffinePose, source_size: tuple[int, int], canvas: tuple[int, int]
) -> tuple[int, int, int, int] | None:
    """Canvas-clipped bounding window of the transformed source rectangle."""
    src_w, src_h = source_size
    cw, ch = canvas
    cx = (src_w - 1) / 2.0
    cy = (src_h - 1) / 2.0
    tx, ty = pose.translation
    theta = math.radians(pose.rotation)
    cos_f = math.cos(theta)
    sin_f = math.sin(theta)
    corners_x = np.array([-0.5, src_w - 0.5, src_w - 0.5, -0.5]) - cx
    corners_y = np.array([-0.5, -0.5, src_h - 0.5, src_h - 0.5]) - cy
    fx = pose.scale * (cos_f * corners_x - sin_f * corners_y) + cx + tx
    fy = pose.scale * (sin_f * corners_x + cos_f * corners_y) + cy + ty
    x0 = max(0, int(math.floor(fx.min())) - 1)
    y0 = max(0, int(math.floor(fy.min())) - 1)
    x1 = min(cw, int(math.ceil(fx.max())) + 2)
    y1 = min(ch, int(math.ceil(fy.max())) + 2)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, y0, x1, y1


def _sample_window(
    pose: AffinePose,
    source_size: tuple[int, int],
    window: tuple[int, int, int, int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest-neighbor source indices and validity for a canvas window."""
    src_w, src_h = source_size
    x0, y0, x1, y1 = window
    xs = np.arange(x0, x1, dtype=np.float64)
    ys = np.arange(y0, y1, dtype=np.float64)
    px, py = _inverse_source_coords(pose, source_size, xs, ys)
    ix = np.rint(px).astype(np.int64)
    iy = np.rint(py).astype(np.int64)
    valid = (ix >= 0) & (ix < src_w) & (iy >= 0) & (iy < src_h)
    np.clip(ix, 0, src_w - 1, out=ix)
    np.clip(iy, 0, src_h - 1, out=iy)
    return ix, iy, valid


def transform_mask(
    mask: BinaryMask, pose: AffinePose, canvas: tuple[int, int]
) -> BinaryMask:
    """Rotate, scale, and translate a mask onto a canvas.

    Inverse mapping with nearest-neighbor sampling keeps the result binary;
    anything landing outside the canvas is clipped.
    """
    cw, ch = canvas
    if cw < 1 or ch < 1:
        raise ValueError(f"canvas dimensions must be positive, got {canvas}")
    if pose.scale <= 0:
        raise ValueError("scale must be positive")
    out = np.zeros((ch, cw), dtype=bool)
    window = _forward_window(pose, (mask.width, mask.height), canvas)
    if window is not None and mask.area > 0:
        x0, y0, x1, y1 = window
        ix, iy, valid = _sample_window(pose, (mask.width, mask.height), window)
        out[y0:y1, x0:x1] = mask.bits[iy, ix] & valid
    return BinaryMask(out)


def transform_image(
    exemplar: ExemplarImage, pose: AffinePose, canvas: tuple[int, int]
) -> tuple[BinaryMask, np.ndarray]:
    """Transform an exemplar's mask and pixels together onto a canvas.

    Returns the on-canvas mask and an HxWx3 uint8 image holding the sampled
    colors at mask positions (zero elsewhere).  Both are produced by the same
    nearest-neighbor lookup, so the mask is bit-identical to
    ``transform_mask(exemplar.mask, pose, canvas)``.
    """
    if exemplar.mask is None:
        raise ValueError("exemplar has no mask attached")
    cw, ch = canvas
    if cw < 1 or ch < 1:
        raise ValueError(f"canvas dimensions must be positive, got {canvas}")
    out_mask = np.zeros((ch, cw), dtype=bool)
    out_rgb = np.zeros((ch, cw, 3), dtype=np.uint8)
    size = (exemplar.width, exemplar.height)
    window = _forward_window(pose, size, canvas)
    if window is not None and exemplar.mask.area > 0:
        x0, y0, x1, y1 = window
        ix, iy, valid = _sample_window(pose, size, window)
        hit = exemplar.mask.bits[iy, ix] & valid
        out_mask[y0:y1, x0:x1] = hit
        colors = exemplar.pixels[iy, ix]
        colors[~hit] = 0
        out_rgb[y0:y1, x0:x1] = colors
    return BinaryMask(out_mask), out_rgb


_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class Component:
    """One connected foreground region, as a full-size mask plus its area."""

    mask: BinaryMask
    area: int


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[Component]:
    """Split a mask into connected regions (scan order, 4- or 8-connected)."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCTURE_8 if connectivity == 8 else _STRUCTURE_4
    labels, count = ndimage.label(mask.bits, structure=structure)
    components = []
    for label in range(1, count + 1):
        bits = labels == label
        components.append(Component(BinaryMask(bits), int(np.count_nonzero(bits))))
    return components


def mask_bbox(mask: BinaryMask) -> BBox:
    """Tight axis-aligned extent of the set bits.  Errors on an empty mask."""
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0:
        raise ValueError("cannot take the bounding box of an empty mask")
    return BBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def mask_centroid(mask: BinaryMask) -> tuple[float, float]:
    """Arithmetic mean of set-bit coordinates.  Errors on an empty mask."""
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0:
        raise ValueError("cannot take the centroid of an empty mask")
    return float(xs.mean()), float(ys.mean())
