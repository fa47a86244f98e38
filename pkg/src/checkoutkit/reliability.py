"""Reliability-gated selection of unlabeled checkout images.

A test image is reliable when the rounded mass of the predicted density map
equals the number of post-NMS detections scoring strictly above the
confidence threshold.  Reliable images receive pseudo-labels from those same
high-confidence detections and drive fine-tuning; the orchestrated procedure
is train, select, drop the counting head, fine-tune, evaluate.

Detector and counter are abstract interfaces.  Simulated implementations that
perturb ground truth with a configurable noise model make the whole procedure
testable end to end without any network.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .density import DensityMap, KernelParams, count_from_density, generate_density, round_count
from .geometry import BBox, Detection, iou
from .metrics import (
    MetricsReport,
    ShoppingList,
    compute_metrics_report,
    tally_from_detections,
)
from .synthesis import SynthesizedScene

__all__ = [
    "AdaptationConfig",
    "AdaptationReport",
    "Counter",
    "Detector",
    "GateConfig",
    "GateDiagnostics",
    "PhaseRecord",
    "TrainingHooks",
    "PseudoAnnotations",
    "SceneSample",
    "SimulatedCounter",
    "SimulatedDetector",
    "SimulatedModelNoise",
    "is_reliable",
    "nms",
    "pseudo_label",
    "run_adaptation",
    "select_reliable",
    "simulated_counter",
    "simulated_detector",
]


@dataclass(frozen=True, eq=False)
class SceneSample:
    """A test-set image record.

    Ground-truth fields are optional for real data; the simulated models and
    selection-precision bookkeeping read them when present.
    """

    image_id: str
    width: int
    height: int
    difficulty: str | None = None
    gt_boxes: tuple[tuple[BBox, int], ...] = ()
    gt_points: tuple[tuple[tuple[float, float], int], ...] = ()
    gt_shopping: ShoppingList | None = None
    pixels: np.ndarray | None = None

    @classmethod
    def from_scene(
        cls,
        scene: SynthesizedScene,
        image_id: str,
        difficulty: str | None = None,
        keep_pixels: bool = False,
    ) -> "SceneSample":
        return cls(
            image_id=image_id,
            width=scene.image.shape[1],
            height=scene.image.shape[0],
            difficulty=difficulty,
            gt_boxes=scene.bboxes,
            gt_points=scene.points,
            gt_shopping=scene.shopping_list,
            pixels=scene.image if keep_pixels else None,
        )


@runtime_checkable
class Detector(Protocol):
    """Produces pre-NMS detections for an image."""

    concurrency_safe: bool

    def detect(self, image: SceneSample) -> list[Detection]: ...


@runtime_checkable
class Counter(Protocol):
    """Predicts a nonnegative density map for an image."""

    concurrency_safe: bool

    def count_map(self, image: SceneSample) -> DensityMap: ...


@dataclass(frozen=True)
class GateConfig:
    score_threshold: float = 0.95
    nms_iou: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ValueError("score_threshold must be in [0, 1]")
        if not (0.0 <= self.nms_iou <= 1.0):
            raise ValueError("nms_iou must be in [0, 1]")


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-category suppression, highest score first.

    A detection is dropped when its IoU with an already kept detection of the
    same category exceeds the threshold.  Ties in score keep input order; the
    result is sorted by descending score.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[Detection] = []
    for i in order:
        candidate = detections[i]
        suppressed = any(
            candidate.category == survivor.category
            and iou(candidate.box, survivor.box) > iou_threshold
            for survivor in kept
        )
        if not suppressed:
            kept.append(candidate)
    return kept


@dataclass(frozen=True)
class GateDiagnostics:
    density_total: float
    rounded_count: int
    confident_detections: int
    reliable: bool

    def to_dict(self) -> dict:
        return {
            "density_total": self.density_total,
            "rounded_count": self.rounded_count,
            "confident_detections": self.confident_detections,
            "reliable": self.reliable,
        }


def is_reliable(
    image: SceneSample,
    detector: Detector,
    counter: Counter,
    cfg: GateConfig | None = None,
) -> tuple[bool, GateDiagnostics]:
    """Equality test between the rounded density count and the number of
    post-NMS detections scoring strictly above the confidence threshold."""
    cfg = cfg or GateConfig()
    density_total = count_from_density(counter.count_map(image))
    rounded = round_count(density_total)
    survivors = nms(detector.detect(image), cfg.nms_iou)
    confident = sum(1 for det in survivors if det.score > cfg.score_threshold)
    verdict = rounded == confident
    return verdict, GateDiagnostics(
        density_total=density_total,
        rounded_count=rounded,
        confident_detections=confident,
        reliable=verdict,
    )


def _models_concurrency_safe(detector: Detector, counter: Counter) -> bool:
    return getattr(detector, "concurrency_safe", False) and getattr(
        counter, "concurrency_safe", False
    )


def select_reliable(
    testset: Sequence[SceneSample],
    detector: Detector,
    counter: Counter,
    cfg: GateConfig | None = None,
    max_workers: int | None = None,
) -> tuple[list[SceneSample], list[SceneSample]]:
    """Partition a test set by the reliability gate, preserving order.

    Images are gated concurrently when ``max_workers`` is set and both models
    declare themselves concurrency-safe; otherwise evaluation is sequential.
    """
    cfg = cfg or GateConfig()
    if max_workers and max_workers > 1 and _models_concurrency_safe(detector, counter):
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            verdicts = list(
                pool.map(lambda s: is_reliable(s, detector, counter, cfg)[0], testset)
            )
    else:
        verdicts = [is_reliable(s, detector, counter, cfg)[0] for s in testset]
    reliable = [s for s, ok in zip(testset, verdicts) if ok]
    rejected = [s for s, ok in zip(testset, verdicts) if not ok]
    return reliable, rejected


@dataclass(frozen=True)
class PseudoAnnotations:
    """Training annotations harvested from a model's own confident detections."""

    boxes: tuple[tuple[BBox, int], ...]
    shopping_list: ShoppingList


def pseudo_label(
    image: SceneSample, detector: Detector, cfg: GateConfig | None = None
) -> PseudoAnnotations:
    """Post-NMS detections above the confidence threshold become labels."""
    cfg = cfg or GateConfig()
    confident = [
        det
        for det in nms(detector.detect(image), cfg.nms_iou)
        if det.score > cfg.score_threshold
    ]
    return PseudoAnnotations(
        boxes=tuple((det.box, det.category) for det in confident),
        shopping_list=ShoppingList.from_categories(det.category for det in confident),
    )


# ---------------------------------------------------------------------------
# Orchestration


def _noop(*_args, **_kwargs) -> None:
    return None


@dataclass
class TrainingHooks:
    """Callbacks standing in for the out-of-scope network training steps."""

    train: Callable[[Sequence[SceneSample]], None] = _noop
    fine_tune: Callable[[Sequence[SceneSample]], None] = _noop
    remove_counter: Callable[[], None] = _noop


@dataclass(frozen=True)
class AdaptationConfig:
    gate: GateConfig = field(default_factory=GateConfig)
    n_iter: int = 1
    tally_threshold: float = 0.5
    skip_fine_tune_when_empty: bool = False
    max_workers: int | None = None

    def __post_init__(self) -> None:
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")


@dataclass(frozen=True)
class PhaseRecord:
    name: str
    seconds: float


@dataclass(frozen=True)
class AdaptationReport:
    phases: tuple[PhaseRecord, ...]
    selected_count: int
    rejected_count: int
    selected_ids: tuple[str, ...]
    selection_precision: float | None
    metrics: MetricsReport

    def to_dict(self, include_timings: bool = True) -> dict:
        return {
            "phases": [
                {"name": p.name, "seconds": p.seconds if include_timings else 0.0}
                for p in self.phases
            ],
            "selected_count": self.selected_count,
            "rejected_count": self.rejected_count,
            "selected_ids": list(self.selected_ids),
            "selection_precision": self.selection_precision,
            "metrics": self.metrics.to_dict(),
        }


def _evaluate(
    testset: Sequence[SceneSample], detector: Detector, cfg: AdaptationConfig
) -> MetricsReport:
    preds = []
    gts = []
    detections = {}
    gt_boxes = {}
    levels = []
    image_ids = []
    for sample in testset:
        if sample.gt_shopping is None:
            raise ValueError(f"image {sample.image_id} has no ground truth to evaluate")
        survivors = nms(detector.detect(sample), cfg.gate.nms_iou)
        preds.append(tally_from_detections(survivors, cfg.tally_threshold))
        gts.append(sample.gt_shopping)
        detections[sample.image_id] = survivors
        gt_boxes[sample.image_id] = list(sample.gt_boxes)
        levels.append(sample.difficulty or "all")
        image_ids.append(sample.image_id)
    return compute_metrics_report(
        preds, gts, detections, gt_boxes, levels=levels, image_ids=image_ids
    )


def run_adaptation(
    train_set: Sequence[SceneSample],
    test_set: Sequence[SceneSample],
    detector: Detector,
    counter: Counter,
    hooks: TrainingHooks | None = None,
    cfg: AdaptationConfig | None = None,
) -> AdaptationReport:
    """Run the five ordered phases of the selection-and-fine-tune procedure.

    Phases: train on the labeled synthetic set (n_iter hook calls), select
    the reliable test subset, remove the counting head, fine-tune on the
    selection (n_iter hook calls), and evaluate on the full test set.
    Selection precision is the fraction of selected images whose pseudo
    shopping list matches the ground-truth list, when ground truth exists.
    """
    hooks = hooks or TrainingHooks()
    cfg = cfg or AdaptationConfig()
    phases: list[PhaseRecord] = []

    def timed(name: str, action: Callable[[], object]) -> object:
        start = time.perf_counter()
        result = action()
        phases.append(PhaseRecord(name, time.perf_counter() - start))
        return result

    for _ in range(cfg.n_iter):
        timed("train", lambda: hooks.train(train_set))

    reliable, rejected = timed(
        "select",
        lambda: select_reliable(
            test_set, detector, counter, cfg.gate, cfg.max_workers
        ),
    )

    timed("remove-counter", hooks.remove_counter)

    if not reliable and not cfg.skip_fine_tune_when_empty:
        raise RuntimeError(
            "reliability gate selected no images; set skip_fine_tune_when_empty "
            "to proceed without fine-tuning"
        )
    if reliable or not cfg.skip_fine_tune_when_empty:
        for _ in range(cfg.n_iter):
            timed("fine-tune", lambda: hooks.fine_tune(reliable))

    metrics = timed("evaluate", lambda: _evaluate(test_set, detector, cfg))

    with_gt = [s for s in reliable if s.gt_shopping is not None]
    precision = None
    if with_gt:
        exact = sum(
            1
            for s in with_gt
            if pseudo_label(s, detector, cfg.gate).shopping_list == s.gt_shopping
        )
        precision = exact / len(with_gt)

    return AdaptationReport(
        phases=tuple(phases),
        selected_count=len(reliable),
        rejected_count=len(rejected),
        selected_ids=tuple(s.image_id for s in reliable),
        selection_precision=precision,
        metrics=metrics,
    )


# ---------------------------------------------------------------------------
# Simulated models


@dataclass(frozen=True)
class SimulatedModelNoise:
    """Noise model for the simulated detector and counter.

    ``score_concentration`` shapes confidence scores: detections with the
    correct label draw Beta(c, 1) (near 1), mislabeled and spurious ones draw
    Beta(1, c) (near 0); infinity collapses both to exact 1 and 0.
    """

    miss_prob: float = 0.0
    false_pos_rate: float = 0.0
    label_flip_prob: float = 0.0
    box_jitter: float = 0.0
    score_concentration: float = math.inf
    count_noise_std: float = 0.0

    def __post_init__(self) -> None:
        for name in ("miss_prob", "false_pos_rate", "label_flip_prob"):
            value = getattr(self, name)
            if name == "false_pos_rate":
                if value < 0:
                    raise ValueError("false_pos_rate must be >= 0")
            elif not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.box_jitter < 0 or self.count_noise_std < 0:
            raise ValueError("noise scales must be >= 0")
        if self.score_concentration <= 0:
            raise ValueError("score_concentration must be positive")

    @classmethod
    def noiseless(cls) -> "SimulatedModelNoise":
        return cls()

    def to_dict(self) -> dict:
        return {
            "miss_prob": self.miss_prob,
            "false_pos_rate": self.false_pos_rate,
            "label_flip_prob": self.label_flip_prob,
            "box_jitter": self.box_jitter,
            "score_concentration": self.score_concentration,
            "count_noise_std": self.count_noise_std,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimulatedModelNoise":
        allowed = {
            "miss_prob",
            "false_pos_rate",
            "label_flip_prob",
            "box_jitter",
            "score_concentration",
            "count_noise_std",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown noise fields: {sorted(unknown)}")
        return cls(**data)


def _image_rng(seed: int, image_id: str, stream: int) -> np.random.Generator:
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(stream, key))
    return np.random.Generator(np.random.Philox(sequence))


def _confidence(rng: np.random.Generator, concentration: float, correct: bool) -> float:
    if math.isinf(concentration):
        return 1.0 if correct else 0.0
    if correct:
        return float(rng.beta(concentration, 1.0))
    return float(rng.beta(1.0, concentration))


class SimulatedDetector:
    """A detector that perturbs ground-truth boxes with the noise model.

    Output is deterministic per (seed, image id): each ground-truth box is
    dropped with miss_prob, jittered, mislabeled with label_flip_prob, and
    scored by its correctness; Poisson(false_pos_rate) spurious boxes are
    appended.
    """

    concurrency_safe = True

    def __init__(
        self, noise: SimulatedModelNoise, seed: int, num_categories: int
    ) -> None:
        if num_categories < 1:
            raise ValueError("need at least one category")
        self.noise = noise
        self.seed = seed
        self.num_categories = num_categories

    def detect(self, image: SceneSample) -> list[Detection]:
        rng = _image_rng(self.seed, image.image_id, stream=0)
        noise = self.noise
        detections: list[Detection] = []
        for box, category in image.gt_boxes:
            if rng.uniform() < noise.miss_prob:
                continue
            coords = np.array([box.x_min, box.y_min, box.x_max, box.y_max])
            if noise.box_jitter > 0:
                coords = coords + rng.normal(0.0, noise.box_jitter, size=4)
            x0, x1 = sorted((coords[0], coords[2]))
            y0, y1 = sorted((coords[1], coords[3]))
            label = category
            if rng.uniform() < noise.label_flip_prob and self.num_categories > 1:
                others = [c for c in range(1, self.num_categories + 1) if c != category]
                label = int(others[int(rng.integers(0, len(others)))])
            score = _confidence(rng, noise.score_concentration, label == category)
            detections.append(Detection(BBox(x0, y0, x1, y1), label, score))
        for _ in range(int(rng.poisson(noise.false_pos_rate))):
            w = rng.uniform(0.05, 0.3) * image.width
            h = rng.uniform(0.05, 0.3) * image.height
            cx = rng.uniform(w / 2, image.width - w / 2)
            cy = rng.uniform(h / 2, image.height - h / 2)
            label = int(rng.integers(1, self.num_categories + 1))
            score = _confidence(rng, noise.score_concentration, correct=False)
            detections.append(
                Detection(BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), label, score)
            )
        return detections


class SimulatedCounter:
    """A counter built from ground-truth centers plus optional mass noise.

    The noise perturbs the total mass with a zero-mean Gaussian draw, spread
    proportionally over the cells so the map stays nonnegative.
    """

    concurrency_safe = True

    def __init__(
        self,
        noise: SimulatedModelNoise,
        seed: int,
        kernel: KernelParams | None = None,
    ) -> None:
        self.noise = noise
        self.seed = seed
        self.kernel = kernel or KernelParams()

    def count_map(self, image: SceneSample) -> DensityMap:
        centers = [point for point, _ in image.gt_points]
        density = generate_density(centers, (image.width, image.height), self.kernel)
        if self.noise.count_noise_std <= 0:
            return density
        rng = _image_rng(self.seed, image.image_id, stream=1)
        delta = float(rng.normal(0.0, self.noise.count_noise_std))
        total = count_from_density(density)
        if total > 0:
            factor = max(0.0, (total + delta) / total)
            return DensityMap(density.values * factor)
        if delta > 0:
            bump = np.full_like(density.values, delta / density.values.size)
            return DensityMap(bump)
        return density


def simulated_detector(
    noise: SimulatedModelNoise, seed: int, num_categories: int
) -> SimulatedDetector:
    return SimulatedDetector(noise, seed, num_categories)


def simulated_counter(
    noise: SimulatedModelNoise, seed: int, kernel: KernelParams | None = None
) -> SimulatedCounter:
    return SimulatedCounter(noise, seed, kernel)
