"""Checkout evaluation metrics.

Counting metrics compare predicted and ground-truth shopping lists:
exact-list accuracy, mean counting distance per image, mean per-category
counting-error ratio, and mean per-category count IoU.  Detection quality is
measured with COCO-style average precision at IoU 0.5 and averaged over the
ten thresholds 0.50:0.05:0.95.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BBox, Detection, iou

__all__ = [
    "COCO_IOU_THRESHOLDS",
    "MetricsReport",
    "ShoppingList",
    "acd",
    "average_precision",
    "checkout_accuracy",
    "compute_metrics_report",
    "counting_distance",
    "map50",
    "mccd",
    "mciou",
    "mmap",
    "tally_from_detections",
]

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

GroundTruthBox = tuple[BBox, int]


class ShoppingList:
    """Per-image category -> count tally.  Absent categories count as zero."""

    __slots__ = ("_counts",)

    def __init__(self, counts: Mapping[int, int] | None = None) -> None:
        clean: dict[int, int] = {}
        for category, count in (counts or {}).items():
            category = int(category)
            count = int(count)
            if category <= 0:
                raise ValueError(f"category ids must be > 0, got {category}")
            if count < 0:
                raise ValueError(f"counts must be >= 0, got {count} for {category}")
            if count > 0:
                clean[category] = count
        self._counts = dict(sorted(clean.items()))

    @classmethod
    def from_categories(cls, categories: Iterable[int]) -> "ShoppingList":
        counts: dict[int, int] = {}
        for category in categories:
            counts[category] = counts.get(category, 0) + 1
        return cls(counts)

    @property
    def counts(self) -> dict[int, int]:
        return dict(self._counts)

    def get(self, category: int) -> int:
        return self._counts.get(category, 0)

    def categories(self) -> frozenset[int]:
        return frozenset(self._counts)

    def total(self) -> int:
        return sum(self._counts.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ShoppingList):
            return NotImplemented
        return self._counts == other._counts

    def __hash__(self) -> int:
        return hash(tuple(self._counts.items()))

    def __repr__(self) -> str:
        return f"ShoppingList({self._counts})"


def _category_universe(
    preds: Sequence[ShoppingList],
    gts: Sequence[ShoppingList],
    categories: Iterable[int] | None,
) -> list[int]:
    if categories is not None:
        return sorted(set(categories))
    universe: set[int] = set()
    for tally in preds:
        universe |= tally.categories()
    for tally in gts:
        universe |= tally.categories()
    return sorted(universe)


def counting_distance(
    pred: ShoppingList, gt: ShoppingList
) -> tuple[dict[int, int], int]:
    """Per-category absolute count errors and their sum for one image."""
    per_category = {
        category: abs(pred.get(category) - gt.get(category))
        for category in sorted(pred.categories() | gt.categories())
    }
    return per_category, sum(per_category.values())


def _check_paired(preds: Sequence[ShoppingList], gts: Sequence[ShoppingList]) -> None:
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ValueError("metrics need at least one image")


def checkout_accuracy(
    preds: Sequence[ShoppingList], gts: Sequence[ShoppingList]
) -> float:
    """Fraction of images whose complete list is predicted exactly."""
    _check_paired(preds, gts)
    exact = sum(1 for pred, gt in zip(preds, gts) if pred == gt)
    return exact / len(preds)


def acd(preds: Sequence[ShoppingList], gts: Sequence[ShoppingList]) -> float:
    """Mean total counting distance per image."""
    _check_paired(preds, gts)
    total = sum(counting_distance(pred, gt)[1] for pred, gt in zip(preds, gts))
    return total / len(preds)


def mccd(
    preds: Sequence[ShoppingList],
    gts: Sequence[ShoppingList],
    categories: Iterable[int] | None = None,
) -> float:
    """Mean over categories of summed count error over summed ground truth.

    Categories with no ground-truth instances anywhere are excluded from the
    average (the ratio is undefined there); they still count via mciou.
    """
    _check_paired(preds, gts)
    ratios = []
    for category in _category_universe(preds, gts, categories):
        gt_total = sum(gt.get(category) for gt in gts)
        if gt_total == 0:
            continue
        err_total = sum(
            abs(pred.get(category) - gt.get(category))
            for pred, gt in zip(preds, gts)
        )
        ratios.append(err_total / gt_total)
    if not ratios:
        return 0.0
    return sum(ratios) / len(ratios)


def mciou(
    preds: Sequence[ShoppingList],
    gts: Sequence[ShoppingList],
    categories: Iterable[int] | None = None,
) -> float:
    """Mean over categories of summed min(GT, P) over summed max(GT, P)."""
    _check_paired(preds, gts)
    ratios = []
    for category in _category_universe(preds, gts, categories):
        min_total = sum(
            min(pred.get(category), gt.get(category))
            for pred, gt in zip(preds, gts)
        )
        max_total = sum(
            max(pred.get(category), gt.get(category))
            for pred, gt in zip(preds, gts)
        )
        if max_total == 0:
            continue
        ratios.append(min_total / max_total)
    if not ratios:
        return 0.0
    return sum(ratios) / len(ratios)


def tally_from_detections(
    detections: Sequence[Detection], score_threshold: float = 0.5
) -> ShoppingList:
    """Shopping list from detections scoring strictly above the threshold."""
    return ShoppingList.from_categories(
        det.category for det in detections if det.score > score_threshold
    )


def _ap_from_matches(matches: list[bool], gt_count: int) -> float:
    """Area under the monotone precision envelope over all recall points."""
    if gt_count == 0:
        raise ValueError("AP undefined for categories with no ground truth")
    if not matches:
        return 0.0
    tp = np.cumsum(np.asarray(matches, dtype=np.float64))
    fp = np.cumsum(~np.asarray(matches, dtype=bool))
    recall = tp / gt_count
    precision = tp / (tp + fp)
    # Monotone envelope from the right, integrated over recall increments.
    mrec = np.concatenate(([0.0], recall, [recall[-1]]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def average_precision(
    detections: Mapping[str, Sequence[Detection]],
    ground_truths: Mapping[str, Sequence[GroundTruthBox]],
    iou_threshold: float,
    categories: Iterable[int] | None = None,
) -> dict[int, float]:
    """Per-category AP at one IoU threshold over a whole dataset.

    Detections are greedily matched in descending score order (ties by input
    order) to the same-image, same-category ground-truth box of highest IoU
    at or above the threshold; each ground-truth box matches at most once.
    Categories without ground truth are excluded.
    """
    if categories is None:
        cats: set[int] = set()
        for boxes in ground_truths.values():
            cats.update(category for _, category in boxes)
        categories = cats
    image_ids = list(ground_truths.keys())
    results: dict[int, float] = {}
    for category in sorted(categories):
        gt_count = 0
        gt_by_image: dict[str, list[BBox]] = {}
        for image_id in image_ids:
            boxes = [box for box, cat in ground_truths[image_id] if cat == category]
            gt_by_image[image_id] = boxes
            gt_count += len(boxes)
        if gt_count == 0:
            continue
        pool: list[tuple[float, int, str, Detection]] = []
        order = 0
        for image_id, dets in detections.items():
            for det in dets:
                if det.category == category:
                    pool.append((det.score, order, image_id, det))
                order += 1
        pool.sort(key=lambda item: (-item[0], item[1]))
        matched: dict[str, set[int]] = {image_id: set() for image_id in gt_by_image}
        matches: list[bool] = []
        for _, _, image_id, det in pool:
            candidates = gt_by_image.get(image_id, [])
            best_iou = 0.0
            best_idx = -1
            for idx, gt_box in enumerate(candidates):
                if idx in matched.setdefault(image_id, set()):
                    continue
                overlap = iou(det.box, gt_box)
                if overlap > best_iou:
                    best_iou = overlap
                    best_idx = idx
            if best_idx >= 0 and best_iou >= iou_threshold:
                matched[image_id].add(best_idx)
                matches.append(True)
            else:
                matches.append(False)
        results[category] = _ap_from_matches(matches, gt_count)
    return results


def map50(
    detections: Mapping[str, Sequence[Detection]],
    ground_truths: Mapping[str, Sequence[GroundTruthBox]],
    categories: Iterable[int] | None = None,
) -> float:
    """Mean AP over categories at IoU threshold 0.5."""
    per_category = average_precision(detections, ground_truths, 0.5, categories)
    if not per_category:
        return 0.0
    return sum(per_category.values()) / len(per_category)


def mmap(
    detections: Mapping[str, Sequence[Detection]],
    ground_truths: Mapping[str, Sequence[GroundTruthBox]],
    categories: Iterable[int] | None = None,
) -> float:
    """Mean AP averaged over the ten COCO IoU thresholds, then categories."""
    per_category: dict[int, list[float]] = {}
    for threshold in COCO_IOU_THRESHOLDS:
        for category, ap in average_precision(
            detections, ground_truths, threshold, categories
        ).items():
            per_category.setdefault(category, []).append(ap)
    if not per_category:
        return 0.0
    means = [sum(aps) / len(aps) for aps in per_category.values()]
    return sum(means) / len(means)


@dataclass(frozen=True)
class MetricsReport:
    """The six checkout metrics, optionally broken down per difficulty level.

    ``map50``/``mmap`` are None when no detections were supplied.
    """

    c_acc: float
    acd: float
    mccd: float
    mciou: float
    map50: float | None = None
    mmap: float | None = None
    per_level: Mapping[str, "MetricsReport"] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("c_acc", "mciou"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("map50", "mmap"):
            value = getattr(self, name)
            if value is not None and not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.acd < 0 or self.mccd < 0:
            raise ValueError("distance metrics must be nonnegative")
        object.__setattr__(self, "per_level", dict(self.per_level))

    def to_dict(self) -> dict:
        out = {
            "cAcc": self.c_acc,
            "ACD": self.acd,
            "mCCD": self.mccd,
            "mCIoU": self.mciou,
            "mAP50": self.map50,
            "mmAP": self.mmap,
        }
        if self.per_level:
            out["per_level"] = {
                level: report.to_dict() for level, report in self.per_level.items()
            }
        return out


def compute_metrics_report(
    preds: Sequence[ShoppingList],
    gts: Sequence[ShoppingList],
    detections: Mapping[str, Sequence[Detection]] | None = None,
    gt_boxes: Mapping[str, Sequence[GroundTruthBox]] | None = None,
    levels: Sequence[str] | None = None,
    image_ids: Sequence[str] | None = None,
    categories: Iterable[int] | None = None,
) -> MetricsReport:
    """Assemble the full report, with a per-level breakdown when levels given."""
    _check_paired(preds, gts)
    has_detection_data = detections is not None and gt_boxes is not None

    def bundle(idx: Sequence[int]) -> MetricsReport:
        sub_preds = [preds[i] for i in idx]
        sub_gts = [gts[i] for i in idx]
        sub_map50 = sub_mmap = None
        if has_detection_data:
            ids = (
                [image_ids[i] for i in idx]
                if image_ids is not None
                else [str(i) for i in idx]
            )
            sub_dets = {image_id: detections.get(image_id, []) for image_id in ids}
            sub_boxes = {image_id: gt_boxes.get(image_id, []) for image_id in ids}
            sub_map50 = map50(sub_dets, sub_boxes, categories)
            sub_mmap = mmap(sub_dets, sub_boxes, categories)
        return MetricsReport(
            c_acc=checkout_accuracy(sub_preds, sub_gts),
            acd=acd(sub_preds, sub_gts),
            mccd=mccd(sub_preds, sub_gts, categories),
            mciou=mciou(sub_preds, sub_gts, categories),
            map50=sub_map50,
            mmap=sub_mmap,
        )

    overall = bundle(list(range(len(preds))))
    per_level: dict[str, MetricsReport] = {}
    if levels is not None:
        if len(levels) != len(preds):
            raise ValueError("levels must parallel the image lists")
        for level in sorted(set(levels)):
            idx = [i for i, lvl in enumerate(levels) if lvl == level]
            per_level[level] = bundle(idx)
    return MetricsReport(
        c_acc=overall.c_acc,
        acd=overall.acd,
        mccd=overall.mccd,
        mciou=overall.mciou,
        map50=overall.map50,
        mmap=overall.mmap,
        per_level=per_level,
    )
