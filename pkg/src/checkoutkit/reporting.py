"""Report writers: JSON plus a CSV table and matplotlib figures per report.

Every report path writes the machine-readable JSON the pipeline consumes, a
flat CSV next to it for spreadsheets, and (unless disabled) a PNG figure
summarizing the result.  Figure output is deterministic for fixed inputs.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .dataio import save_json
from .metrics import MetricsReport
from .pruning import PoseRecord
from .reliability import AdaptationReport

__all__ = [
    "write_adaptation_report",
    "write_metrics_report",
    "write_prune_report",
]

_PNG_METADATA = {"Software": "checkoutkit"}

_METRIC_COLUMNS = ("cAcc", "ACD", "mCCD", "mCIoU", "mAP50", "mmAP")


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_suffix(suffix)


def _save_figure(fig, path: Path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def _metric_rows(report: MetricsReport) -> list[dict]:
    rows = [{"level": "overall", **report.to_dict()}]
    for level, sub in sorted(report.per_level.items()):
        rows.append({"level": level, **sub.to_dict()})
    for row in rows:
        row.pop("per_level", None)
    return rows


def write_metrics_report(
    report: MetricsReport, path: str | Path, figures: bool = True
) -> None:
    """JSON report plus metrics.csv and a grouped bar chart."""
    path = Path(path)
    save_json(report.to_dict(), path)

    rows = _metric_rows(report)
    with open(_sibling(path, ".csv"), "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=["level", *_METRIC_COLUMNS])
        writer.writeheader()
        writer.writerows(rows)

    if not figures:
        return
    ratio_metrics = ("cAcc", "mCIoU", "mAP50", "mmAP")
    fig, (ax_ratio, ax_dist) = plt.subplots(1, 2, figsize=(10, 4))
    levels = [row["level"] for row in rows]
    x = range(len(levels))
    width = 0.8 / len(ratio_metrics)
    for i, metric in enumerate(ratio_metrics):
        values = [row[metric] if row[metric] is not None else 0.0 for row in rows]
        ax_ratio.bar([xi + i * width for xi in x], values, width, label=metric)
    ax_ratio.set_xticks([xi + 1.5 * width for xi in x])
    ax_ratio.set_xticklabels(levels)
    ax_ratio.set_ylim(0, 1.05)
    ax_ratio.set_title("ratio metrics")
    ax_ratio.legend(fontsize=8)

    for metric, marker in (("ACD", "o"), ("mCCD", "s")):
        ax_dist.plot(levels, [row[metric] for row in rows], marker=marker, label=metric)
    ax_dist.set_title("counting distances")
    ax_dist.legend(fontsize=8)
    fig.tight_layout()
    _save_figure(fig, _sibling(path, ".png"))


def write_adaptation_report(
    report: AdaptationReport,
    path: str | Path,
    figures: bool = True,
    include_timings: bool = True,
) -> None:
    """JSON report plus a selection/metrics summary figure and CSV."""
    path = Path(path)
    save_json(report.to_dict(include_timings=include_timings), path)

    with open(_sibling(path, ".csv"), "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", "value"])
        writer.writerow(["selected_count", report.selected_count])
        writer.writerow(["rejected_count", report.rejected_count])
        writer.writerow(["selection_precision", report.selection_precision])
        for row in _metric_rows(report.metrics):
            for metric in _METRIC_COLUMNS:
                writer.writerow([f"{row['level']}/{metric}", row[metric]])

    if not figures:
        return
    fig, (ax_sel, ax_metrics) = plt.subplots(1, 2, figsize=(10, 4))
    ax_sel.bar(
        ["selected", "rejected"],
        [report.selected_count, report.rejected_count],
        color=["tab:green", "tab:red"],
    )
    title = "reliability gate"
    if report.selection_precision is not None:
        title += f" (precision {report.selection_precision:.3f})"
    ax_sel.set_title(title)

    overall = report.metrics.to_dict()
    names = [m for m in ("cAcc", "mCIoU", "mAP50", "mmAP") if overall[m] is not None]
    ax_metrics.bar(names, [overall[m] for m in names], color="tab:blue")
    ax_metrics.set_ylim(0, 1.05)
    ax_metrics.set_title("final metrics")
    fig.tight_layout()
    _save_figure(fig, _sibling(path, ".png"))


def write_prune_report(
    records: Sequence[PoseRecord],
    threshold: float,
    path: str | Path,
    figures: bool = True,
) -> None:
    """Per-view pruning decisions as JSON/CSV plus a ratio histogram."""
    path = Path(path)
    rows = [
        {
            "category": r.category,
            "view": r.view,
            "area": r.area,
            "ratio": r.ratio,
            "kept": r.realistic,
        }
        for r in records
    ]
    save_json({"threshold": threshold, "poses": rows}, path)

    with open(_sibling(path, ".csv"), "w", newline="") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=["category", "view", "area", "ratio", "kept"]
        )
        writer.writeheader()
        writer.writerows(rows)

    if not figures:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    ratios = [r.ratio for r in records if r.ratio is not None]
    ax.hist(ratios, bins=20, range=(0, 1), color="tab:blue", edgecolor="white")
    ax.axvline(threshold, color="tab:red", linestyle="--", label=f"threshold {threshold}")
    ax.set_xlabel("area ratio")
    ax.set_ylabel("views")
    ax.set_title("pose pruning")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_figure(fig, _sibling(path, ".png"))
