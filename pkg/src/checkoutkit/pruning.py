"""Pose pruning: drop exemplar views whose mask area is too small.

A view's score is its mask area divided by the largest mask area among all
views of the same category.  Views scoring below the threshold are poses an
item cannot rest in on a flat surface, so they are excluded from synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

__all__ = ["PoseRecord", "PruneConfig", "pose_ratios", "prune_poses", "score_poses"]


@dataclass(frozen=True)
class PoseRecord:
    category: int
    view: int
    area: int
    ratio: float | None = None
    realistic: bool | None = None

    def __post_init__(self) -> None:
        if self.area < 0:
            raise ValueError("area must be >= 0")
        if self.ratio is not None and not (0.0 <= self.ratio <= 1.0):
            raise ValueError(f"ratio must be in [0, 1], got {self.ratio}")


@dataclass(frozen=True)
class PruneConfig:
    min_area_ratio: float = 0.45

    def __post_init__(self) -> None:
        if not (0.0 <= self.min_area_ratio <= 1.0):
            raise ValueError(f"threshold must be in [0, 1], got {self.min_area_ratio}")


def pose_ratios(areas: Sequence[float]) -> list[float]:
    """Area of each view divided by the per-category maximum."""
    if not areas:
        raise ValueError("need at least one view")
    peak = max(areas)
    if peak <= 0:
        raise ValueError("all view areas are zero")
    return [area / peak for area in areas]


def score_poses(records: Sequence[PoseRecord]) -> list[PoseRecord]:
    """Fill in the per-category area ratios, preserving input order."""
    by_category: dict[int, list[int]] = {}
    for idx, record in enumerate(records):
        by_category.setdefault(record.category, []).append(idx)
    scored: list[PoseRecord | None] = [None] * len(records)
    for indices in by_category.values():
        ratios = pose_ratios([records[i].area for i in indices])
        for i, ratio in zip(indices, ratios):
            scored[i] = replace(records[i], ratio=ratio)
    return scored  # type: ignore[return-value]


def prune_poses(
    records: Sequence[PoseRecord], cfg: PruneConfig | None = None
) -> tuple[list[PoseRecord], list[PoseRecord]]:
    """Partition scored records into (kept, pruned) by the area-ratio threshold.

    A ratio exactly at the threshold is kept.  Every category keeps at least
    its maximal-area view, since that view's ratio is 1.
    """
    cfg = cfg or PruneConfig()
    kept: list[PoseRecord] = []
    pruned: list[PoseRecord] = []
    for record in records:
        if record.ratio is None:
            raise ValueError(
                f"record (category={record.category}, view={record.view}) has no "
                "ratio; run score_poses first"
            )
        realistic = record.ratio >= cfg.min_area_ratio
        record = replace(record, realistic=realistic)
        (kept if realistic else pruned).append(record)
    return kept, pruned
