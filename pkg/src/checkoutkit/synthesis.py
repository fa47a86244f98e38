"""Checkout scene composition from pruned exemplar cutouts.

Instances get a uniform random rotation, a scale drawn from the configured
range, and a translation found by rejection sampling so that every placed
instance keeps more than half of its pixels visible (later placements occlude
earlier ones) and lies fully on the canvas.  Scenes are pure functions of
(seed, catalog, config): the same inputs reproduce byte-identical images and
annotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .catalog import ExemplarCatalog
from .geometry import (
    AffinePose,
    BBox,
    BinaryMask,
    iou,
    mask_bbox,
    mask_centroid,
    transform_image,
    transform_mask,
)
from .metrics import ShoppingList

__all__ = [
    "DIFFICULTY_TABLE",
    "BACKGROUND_COLOR",
    "DEFAULT_CANVAS",
    "PlacementConfig",
    "PlacementError",
    "SceneInstance",
    "SceneRenderer",
    "SceneSpec",
    "SynthesizedScene",
    "compose_scene",
    "generate_scenes",
    "occlusion_rate",
    "place_instances",
    "render_hook",
    "sample_scene_spec",
    "scene_seed",
    "scene_spec_for_seed",
    "synthesize_scene",
]

# difficulty -> ((min categories, max categories), (min instances, max instances))
DIFFICULTY_TABLE: dict[str, tuple[tuple[int, int], tuple[int, int]]] = {
    "easy": ((3, 5), (3, 10)),
    "medium": ((5, 8), (10, 15)),
    "hard": ((8, 10), (5, 20)),
}

BACKGROUND_COLOR = (211, 211, 211)

# Checkout-counter resolution; tests pass an explicit 256x256 profile.
DEFAULT_CANVAS = (1800, 1800)

SceneRenderer = Callable[[np.ndarray], np.ndarray]

_SPEC_STREAM = 0
_PLACEMENT_STREAM = 1


class PlacementError(RuntimeError):
    """Raised when a scene cannot satisfy the occlusion/fit constraints."""


def _rng_for(seed: int, *stream: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream))
    return np.random.Generator(np.random.Philox(sequence))


def scene_seed(base_seed: int, index: int) -> int:
    """Derive the per-scene seed for the index-th scene of a run."""
    sequence = np.random.SeedSequence(entropy=base_seed, spawn_key=(index,))
    return int(sequence.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SceneSpec:
    """A fully sampled scene recipe: counts, per-instance categories, canvas."""

    difficulty: str
    category_count: int
    instance_count: int
    canvas: tuple[int, int]
    seed: int
    instance_categories: tuple[int, ...]
    background: str | None = None

    def __post_init__(self) -> None:
        if self.difficulty not in DIFFICULTY_TABLE:
            raise ValueError(f"unknown difficulty {self.difficulty!r}")
        (cat_lo, cat_hi), (inst_lo, inst_hi) = DIFFICULTY_TABLE[self.difficulty]
        if not cat_lo <= self.category_count <= cat_hi:
            raise ValueError(
                f"{self.difficulty} scenes need {cat_lo}..{cat_hi} categories, "
                f"got {self.category_count}"
            )
        lower = max(inst_lo, self.category_count)
        if not lower <= self.instance_count <= inst_hi:
            raise ValueError(
                f"{self.difficulty} scenes need {lower}..{inst_hi} instances, "
                f"got {self.instance_count}"
            )
        if self.canvas[0] < 1 or self.canvas[1] < 1:
            raise ValueError(f"canvas must be positive, got {self.canvas}")
        if len(self.instance_categories) != self.instance_count:
            raise ValueError("per-instance categories must match instance_count")
        if len(set(self.instance_categories)) != self.category_count:
            raise ValueError("distinct instance categories must match category_count")
        object.__setattr__(
            self, "instance_categories", tuple(int(c) for c in self.instance_categories)
        )
        object.__setattr__(self, "canvas", (int(self.canvas[0]), int(self.canvas[1])))


@dataclass(frozen=True, eq=False)
class SceneInstance:
    """One placed exemplar: pose, stacking order, on-canvas mask, occlusion."""

    category: int
    view: int
    pose: AffinePose
    z: int
    mask_on_canvas: BinaryMask
    occlusion: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.occlusion < 0.5):
            raise ValueError(
                f"instance occlusion must stay below 0.5, got {self.occlusion}"
            )
        if self.z < 0:
            raise ValueError("z must be >= 0")


@dataclass(frozen=True, eq=False)
class SynthesizedScene:
    """Composed checkout image with all three annotation types."""

    image: np.ndarray
    instances: tuple[SceneInstance, ...]
    bboxes: tuple[tuple[BBox, int], ...]
    points: tuple[tuple[tuple[float, float], int], ...]
    shopping_list: ShoppingList

    def __post_init__(self) -> None:
        image = np.asarray(self.image)
        if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
            raise ValueError("scene image must be HxWx3 uint8")
        image = np.ascontiguousarray(image)
        image.setflags(write=False)
        object.__setattr__(self, "image", image)
        n = len(self.instances)
        if len(self.bboxes) != n or len(self.points) != n:
            raise ValueError("annotation counts must match the instance count")
        if self.shopping_list.total() != n:
            raise ValueError("shopping list total must equal the instance count")


@dataclass(frozen=True)
class PlacementConfig:
    """Placement constraints and retry caps.

    ``same_category_iou_cap`` keeps the boxes of same-category instances
    separable by per-category NMS at that threshold, so a perfect detector
    recovers the exact instance count on every emitted scene.
    """

    scale_range: tuple[float, float] = (0.4, 0.7)
    max_occlusion: float = 0.5
    same_category_iou_cap: float = 0.5
    max_translation_retries: int = 100
    max_scene_resamples: int = 20

    def __post_init__(self) -> None:
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"scale range must satisfy 0 < lo <= hi <= 1, got {self.scale_range}")
        if not (0.0 < self.max_occlusion <= 1.0):
            raise ValueError("max_occlusion must be in (0, 1]")
        if not (0.0 < self.same_category_iou_cap <= 1.0):
            raise ValueError("same_category_iou_cap must be in (0, 1]")
        if self.max_translation_retries < 1 or self.max_scene_resamples < 0:
            raise ValueError("retry caps must be positive")


def scene_spec_for_seed(
    seed: int,
    difficulty: str,
    catalog: ExemplarCatalog,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    background: str | None = None,
) -> SceneSpec:
    """Deterministically sample a SceneSpec from a seed.

    Category and instance counts are uniform over the difficulty's ranges
    (the instance lower bound is lifted to the category count so every chosen
    category appears at least once); categories are drawn without replacement
    and the remaining instances are spread uniformly across them.
    """
    if difficulty not in DIFFICULTY_TABLE:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    (cat_lo, cat_hi), (inst_lo, inst_hi) = DIFFICULTY_TABLE[difficulty]
    available = catalog.categories_with_realistic_views()
    if len(available) < cat_hi:
        raise ValueError(
            f"catalog offers {len(available)} usable categories; "
            f"{difficulty} scenes can require up to {cat_hi}"
        )
    rng = _rng_for(seed, _SPEC_STREAM)
    category_count = int(rng.integers(cat_lo, cat_hi + 1))
    instance_count = int(rng.integers(max(inst_lo, category_count), inst_hi + 1))
    chosen = rng.choice(np.asarray(available, dtype=np.int64), size=category_count, replace=False)
    counts = np.ones(category_count, dtype=np.int64)
    leftover = instance_count - category_count
    if leftover > 0:
        counts += rng.multinomial(leftover, np.full(category_count, 1.0 / category_count))
    expanded = np.repeat(chosen, counts)
    order = rng.permutation(instance_count)
    return SceneSpec(
        difficulty=difficulty,
        category_count=category_count,
        instance_count=instance_count,
        canvas=canvas,
        seed=int(seed),
        instance_categories=tuple(int(c) for c in expanded[order]),
        background=background,
    )


def sample_scene_spec(
    rng: np.random.Generator,
    difficulty: str,
    catalog: ExemplarCatalog,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    background: str | None = None,
) -> SceneSpec:
    """Draw a scene seed from ``rng`` and expand it into a SceneSpec."""
    seed = int(rng.integers(0, np.iinfo(np.int64).max))
    return scene_spec_for_seed(seed, difficulty, catalog, canvas, background)


@dataclass
class _Placed:
    category: int
    view: int
    rotation: float
    scale: float
    crop: np.ndarray
    ox: int
    oy: int
    translation: tuple[float, float]
    area: int
    covered: np.ndarray = field(init=False)
    covered_count: int = 0

    def __post_init__(self) -> None:
        self.covered = np.zeros_like(self.crop)


def _rasterize_crop(
    mask: BinaryMask, rotation: float, scale: float
) -> tuple[np.ndarray, int, int] | None:
    """Rotate/scale a mask once and crop it tight.

    Returns (crop bits, world_x, world_y) where (world_x, world_y) is the
    crop origin under zero translation; placing the crop at canvas offset
    (ox, oy) therefore corresponds to pose translation (ox - world_x,
    oy - world_y).  Integer translations shift the rasterization exactly.
    """
    side = int(math.ceil(math.hypot(mask.width, mask.height) * scale)) + 4
    tsx = side // 2 - int(round((mask.width - 1) / 2))
    tsy = side // 2 - int(round((mask.height - 1) / 2))
    pose = AffinePose(rotation=rotation, scale=scale, translation=(tsx, tsy))
    scratch = transform_mask(mask, pose, (side, side))
    if scratch.area == 0:
        return None
    ys, xs = np.nonzero(scratch.bits)
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    crop = scratch.bits[y0:y1, x0:x1].copy()
    return crop, x0 - tsx, y0 - tsy


def _candidate_updates(
    records: Sequence[_Placed],
    crop: np.ndarray,
    ox: int,
    oy: int,
    max_occlusion: float,
) -> list[tuple[_Placed, tuple[slice, slice], np.ndarray, int]] | None:
    """Coverage updates if the candidate is placed on top, or None if rejected."""
    ch, cw = crop.shape
    updates = []
    for rec in records:
        rh, rw = rec.crop.shape
        ix0, iy0 = max(rec.ox, ox), max(rec.oy, oy)
        ix1, iy1 = min(rec.ox + rw, ox + cw), min(rec.oy + rh, oy + ch)
        if ix0 >= ix1 or iy0 >= iy1:
            continue
        rec_slices = (slice(iy0 - rec.oy, iy1 - rec.oy), slice(ix0 - rec.ox, ix1 - rec.ox))
        new_slices = (slice(iy0 - oy, iy1 - oy), slice(ix0 - ox, ix1 - ox))
        inter = rec.crop[rec_slices] & crop[new_slices]
        if not inter.any():
            continue
        newly = int(np.count_nonzero(inter & ~rec.covered[rec_slices]))
        new_count = rec.covered_count + newly
        if new_count >= max_occlusion * rec.area:
            return None
        updates.append((rec, rec_slices, inter, new_count))
    return updates


def _try_place(
    spec: SceneSpec,
    catalog: ExemplarCatalog,
    rng: np.random.Generator,
    config: PlacementConfig,
) -> list[_Placed] | None:
    cw, ch = spec.canvas
    records: list[_Placed] = []
    for category in spec.instance_categories:
        views = catalog.realistic_views(category)
        if not views:
            raise ValueError(f"category {category} has no usable views")
        view = views[int(rng.integers(0, len(views)))]
        entry = catalog.get(category, view)
        rotation = float(rng.uniform(0.0, 360.0))
        scale = float(rng.uniform(config.scale_range[0], config.scale_range[1]))
        rasterized = _rasterize_crop(entry.exemplar.mask, rotation, scale)
        if rasterized is None:
            return None
        crop, world_x, world_y = rasterized
        crop_h, crop_w = crop.shape
        if crop_w > cw or crop_h > ch:
            return None
        area = int(np.count_nonzero(crop))
        accepted = False
        for _ in range(config.max_translation_retries):
            ox = int(rng.integers(0, cw - crop_w + 1))
            oy = int(rng.integers(0, ch - crop_h + 1))
            box = BBox(ox, oy, ox + crop_w, oy + crop_h)
            crowded = any(
                rec.category == category
                and iou(box, BBox(rec.ox, rec.oy, rec.ox + rec.crop.shape[1], rec.oy + rec.crop.shape[0]))
                > config.same_category_iou_cap
                for rec in records
            )
            if crowded:
                continue
            updates = _candidate_updates(records, crop, ox, oy, config.max_occlusion)
            if updates is None:
                continue
            for rec, rec_slices, inter, new_count in updates:
                rec.covered[rec_slices] |= inter
                rec.covered_count = new_count
            records.append(
                _Placed(
                    category=category,
                    view=view,
                    rotation=rotation,
                    scale=scale,
                    crop=crop,
                    ox=ox,
                    oy=oy,
                    translation=(float(ox - world_x), float(oy - world_y)),
                    area=area,
                )
            )
            accepted = True
            break
        if not accepted:
            return None
    return records


def place_instances(
    spec: SceneSpec,
    catalog: ExemplarCatalog,
    config: PlacementConfig | None = None,
) -> list[SceneInstance]:
    """Place every instance of a spec, resampling the scene on dead ends."""
    config = config or PlacementConfig()
    cw, ch = spec.canvas
    for resample in range(config.max_scene_resamples + 1):
        rng = _rng_for(spec.seed, _PLACEMENT_STREAM, resample)
        records = _try_place(spec, catalog, rng, config)
        if records is None:
            continue
        instances = []
        for z, rec in enumerate(records):
            bits = np.zeros((ch, cw), dtype=bool)
            crop_h, crop_w = rec.crop.shape
            bits[rec.oy : rec.oy + crop_h, rec.ox : rec.ox + crop_w] = rec.crop
            instances.append(
                SceneInstance(
                    category=rec.category,
                    view=rec.view,
                    pose=AffinePose(
                        rotation=rec.rotation,
                        scale=rec.scale,
                        translation=rec.translation,
                    ),
                    z=z,
                    mask_on_canvas=BinaryMask(bits),
                    occlusion=rec.covered_count / rec.area,
                )
            )
        return instances
    raise PlacementError(
        f"seed {spec.seed}: {spec.instance_count} instances would not fit a "
        f"{cw}x{ch} canvas after {config.max_scene_resamples} resamples"
    )


def occlusion_rate(
    instance: SceneInstance, later_instances: Sequence[SceneInstance]
) -> float:
    """Fraction of an instance's mask covered by the union of later masks."""
    bits = instance.mask_on_canvas.bits
    area = instance.mask_on_canvas.area
    if area == 0:
        raise ValueError("instance mask is empty")
    union = np.zeros_like(bits)
    for later in later_instances:
        if later.mask_on_canvas.bits.shape != bits.shape:
            raise ValueError("instances must share one canvas")
        union |= later.mask_on_canvas.bits
    return float(np.count_nonzero(bits & union)) / area


def compose_scene(
    spec: SceneSpec,
    instances: Sequence[SceneInstance],
    catalog: ExemplarCatalog,
    background: np.ndarray | None = None,
) -> SynthesizedScene:
    """Paint placed instances over the background and derive all annotations.

    Boxes come from the full on-canvas masks; points are centroids of the
    visible (unoccluded) portion of each mask.
    """
    cw, ch = spec.canvas
    if background is None:
        image = np.empty((ch, cw, 3), dtype=np.uint8)
        image[:] = BACKGROUND_COLOR
    else:
        background = np.asarray(background, dtype=np.uint8)
        if background.shape != (ch, cw, 3):
            raise ValueError(
                f"background shape {background.shape} does not match canvas {spec.canvas}"
            )
        image = background.copy()

    ordered = sorted(instances, key=lambda inst: inst.z)
    for inst in ordered:
        entry = catalog.get(inst.category, inst.view)
        on_canvas, colors = transform_image(entry.exemplar, inst.pose, spec.canvas)
        bits = on_canvas.bits
        image[bits] = colors[bits]

    occupied = np.zeros((ch, cw), dtype=bool)
    visible: dict[int, np.ndarray] = {}
    for inst in reversed(ordered):
        bits = inst.mask_on_canvas.bits
        visible[inst.z] = bits & ~occupied
        occupied |= bits

    bboxes = []
    points = []
    for inst in ordered:
        bboxes.append((mask_bbox(inst.mask_on_canvas), inst.category))
        points.append((mask_centroid(BinaryMask(visible[inst.z])), inst.category))

    return SynthesizedScene(
        image=image,
        instances=tuple(ordered),
        bboxes=tuple(bboxes),
        points=tuple(points),
        shopping_list=ShoppingList.from_categories(inst.category for inst in ordered),
    )


def render_hook(
    scene: SynthesizedScene, renderer: SceneRenderer | None = None
) -> SynthesizedScene:
    """Run an appearance-only renderer over the image; annotations are kept.

    The default renderer is the identity.  A renderer that changes the image
    dimensions is a contract violation and raises.
    """
    if renderer is None:
        return scene
    rendered = np.asarray(renderer(scene.image))
    if rendered.shape != scene.image.shape:
        raise ValueError(
            f"renderer changed image shape from {scene.image.shape} to {rendered.shape}"
        )
    return replace(scene, image=rendered.astype(np.uint8))


def synthesize_scene(
    spec: SceneSpec,
    catalog: ExemplarCatalog,
    config: PlacementConfig | None = None,
    background: np.ndarray | None = None,
    renderer: SceneRenderer | None = None,
) -> SynthesizedScene:
    """Placement plus composition plus the optional render hook."""
    instances = place_instances(spec, catalog, config)
    scene = compose_scene(spec, instances, catalog, background)
    return render_hook(scene, renderer)


def generate_scenes(
    catalog: ExemplarCatalog,
    difficulty: str,
    count: int,
    base_seed: int,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    config: PlacementConfig | None = None,
    background: np.ndarray | None = None,
) -> list[tuple[SceneSpec, SynthesizedScene]]:
    """Generate ``count`` scenes with per-scene seeds derived from a base seed."""
    out = []
    for index in range(count):
        spec = scene_spec_for_seed(
            scene_seed(base_seed, index), difficulty, catalog, canvas
        )
        out.append((spec, synthesize_scene(spec, catalog, config, background)))
    return out
