"""Joint counting and detection loss, as pure functions with analytic gradients.

The combined objective for a batch of N images is

    total = 1/(2N) * sum_i ( sum_cells (pred_density - gt_density)^2
            + w * sum_det (cross_entropy + [label > 0] * smooth_l1) )

where ``w`` balances the detection terms against the counting term and the
regression term applies only to foreground detections.  No autodiff framework
is involved; every gradient here is hand-derived and checked against finite
differences in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .density import DensityMap
from .geometry import BBox

__all__ = [
    "DetectionPrediction",
    "DetectionTarget",
    "ImageLossInput",
    "LossBreakdown",
    "classification_loss",
    "decode_box",
    "density_loss",
    "encode_box",
    "regression_loss",
    "total_loss",
]


@dataclass(frozen=True, eq=False)
class DetectionTarget:
    """Ground truth for one matched detection: class label and box encoding.

    ``label`` 0 means background, in which case ``box_coords`` is ignored.
    """

    label: int
    box_coords: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.label < 0:
            raise ValueError("label must be >= 0")
        if self.label > 0:
            if self.box_coords is None:
                raise ValueError("foreground targets need box coordinates")
            coords = np.asarray(self.box_coords, dtype=np.float64)
            if coords.shape != (4,):
                raise ValueError("box coordinates must be a 4-vector")
            if not np.all(np.isfinite(coords)):
                raise ValueError("box coordinates must be finite")
            object.__setattr__(self, "box_coords", coords)


@dataclass(frozen=True, eq=False)
class DetectionPrediction:
    """Model output for one detection: raw class scores and a box encoding."""

    class_scores: np.ndarray
    box_coords: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.class_scores, dtype=np.float64)
        coords = np.asarray(self.box_coords, dtype=np.float64)
        if scores.ndim != 1 or scores.size < 2:
            raise ValueError("class scores must be a vector over background + classes")
        if coords.shape != (4,):
            raise ValueError("box coordinates must be a 4-vector")
        if not (np.all(np.isfinite(scores)) and np.all(np.isfinite(coords))):
            raise ValueError("predictions must be finite")
        object.__setattr__(self, "class_scores", scores)
        object.__setattr__(self, "box_coords", coords)


@dataclass(frozen=True, eq=False)
class ImageLossInput:
    """One image's contribution to the batch loss."""

    density_pred: DensityMap
    density_gt: DensityMap
    detections: tuple[tuple[DetectionPrediction, DetectionTarget], ...] = ()


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of the batch loss; total = density + w*(cls + reg)."""

    density_term: float
    cls_term: float
    reg_term: float
    detection_weight: float
    total: float


def density_loss(pred: DensityMap, gt: DensityMap) -> tuple[float, np.ndarray]:
    """Half squared Euclidean distance between density maps, per image.

    Returns the loss value and its gradient with respect to the prediction,
    which is simply the residual grid.
    """
    if pred.values.shape != gt.values.shape:
        raise ValueError(
            f"density shapes differ: {pred.values.shape} vs {gt.values.shape}"
        )
    residual = pred.values - gt.values
    value = 0.5 * float(np.sum(residual * residual))
    return value, residual


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def classification_loss(scores: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy over {background, classes}.

    Gradient with respect to the raw scores is softmax(scores) - onehot(label).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= label < scores.size:
        raise ValueError(f"label {label} out of range for {scores.size} classes")
    shifted = scores - scores.max()
    log_norm = math.log(np.exp(shifted).sum())
    value = log_norm - float(shifted[label])
    grad = _softmax(scores)
    grad[label] -= 1.0
    return value, grad


def regression_loss(
    pred_coords: np.ndarray, gt_coords: np.ndarray
) -> tuple[float, np.ndarray]:
    """Smooth L1 over the 4 box coordinates (quadratic within |x| < 1)."""
    pred_coords = np.asarray(pred_coords, dtype=np.float64)
    gt_coords = np.asarray(gt_coords, dtype=np.float64)
    if pred_coords.shape != (4,) or gt_coords.shape != (4,):
        raise ValueError("box coordinates must be 4-vectors")
    diff = pred_coords - gt_coords
    inner = np.abs(diff) < 1.0
    value = float(np.where(inner, 0.5 * diff * diff, np.abs(diff) - 0.5).sum())
    grad = np.where(inner, diff, np.sign(diff))
    return value, grad


def encode_box(box: BBox, anchor: BBox) -> np.ndarray:
    """Anchor-relative box encoding: center offsets over anchor size, log sizes."""
    if anchor.width <= 0 or anchor.height <= 0:
        raise ValueError("anchor must have positive size")
    if box.width <= 0 or box.height <= 0:
        raise ValueError("box must have positive size")
    bx, by = box.center
    ax, ay = anchor.center
    return np.array(
        [
            (bx - ax) / anchor.width,
            (by - ay) / anchor.height,
            math.log(box.width / anchor.width),
            math.log(box.height / anchor.height),
        ]
    )


def decode_box(coords: np.ndarray, anchor: BBox) -> BBox:
    """Inverse of :func:`encode_box`."""
    if anchor.width <= 0 or anchor.height <= 0:
        raise ValueError("anchor must have positive size")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (4,):
        raise ValueError("box coordinates must be a 4-vector")
    ax, ay = anchor.center
    cx = ax + coords[0] * anchor.width
    cy = ay + coords[1] * anchor.height
    w = anchor.width * math.exp(coords[2])
    h = anchor.height * math.exp(coords[3])
    return BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def total_loss(
    batch: Sequence[ImageLossInput], detection_weight: float = 1.0
) -> LossBreakdown:
    """Batch loss with the 1/(2N) prefactor, split into its three terms.

    Background detections (label 0) contribute classification only.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    scale = 1.0 / (2.0 * len(batch))
    density_term = 0.0
    cls_term = 0.0
    reg_term = 0.0
    for image in batch:
        value, _ = density_loss(image.density_pred, image.density_gt)
        density_term += 2.0 * value  # raw squared distance, no 1/2
        for pred, target in image.detections:
            cls_value, _ = classification_loss(pred.class_scores, target.label)
            cls_term += cls_value
            if target.label > 0:
                reg_value, _ = regression_loss(pred.box_coords, target.box_coords)
                reg_term += reg_value
    density_term *= scale
    cls_term *= scale
    reg_term *= scale
    total = density_term + detection_weight * (cls_term + reg_term)
    return LossBreakdown(
        density_term=density_term,
        cls_term=cls_term,
        reg_term=reg_term,
        detection_weight=detection_weight,
        total=total,
    )
