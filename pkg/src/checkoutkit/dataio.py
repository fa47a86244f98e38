"""File formats: catalog manifests, scene annotations, predictions, PNG masks.

All JSON documents round-trip losslessly and are validated on load; a
violation raises :class:`ValidationError` with the offending path or field.
Boxes are stored as COCO-style [x, y, width, height] on disk and converted to
corner form at the boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from typing import TYPE_CHECKING

from .catalog import CatalogEntry, ExemplarCatalog
from .geometry import BBox, BinaryMask, Detection, ExemplarImage
from .metrics import ShoppingList

if TYPE_CHECKING:
    from .synthesis import SceneSpec, SynthesizedScene

__all__ = [
    "CategoryInfo",
    "CatalogManifest",
    "ExemplarRecord",
    "ImageInfo",
    "InstanceAnnotation",
    "PredictionsFile",
    "SceneAnnotationFile",
    "ValidationError",
    "annotations_from_scenes",
    "load_annotations",
    "load_catalog",
    "load_exemplar_catalog",
    "load_image_png",
    "load_mask_png",
    "load_predictions",
    "materialize_catalog",
    "save_annotations",
    "save_catalog",
    "save_image_png",
    "save_json",
    "save_mask_png",
    "save_predictions",
]


class ValidationError(ValueError):
    """A file violated its documented schema or invariants."""


# ---------------------------------------------------------------------------
# JSON plumbing


def save_json(data: dict, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: file does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: invalid JSON ({err})") from err
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object at the top level")
    return data


def _require(data: Mapping, key: str, context: str):
    if key not in data:
        raise ValidationError(f"{context}: missing field {key!r}")
    return data[key]


# ---------------------------------------------------------------------------
# PNG images and masks


def save_mask_png(mask: BinaryMask, path: str | Path) -> None:
    """Single-channel PNG, 0 = background, 255 = foreground."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(path)


def load_mask_png(path: str | Path) -> BinaryMask:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: mask file does not exist")
    with Image.open(path) as img:
        array = np.asarray(img.convert("L"))
    return BinaryMask(array >= 128)


def save_image_png(pixels: np.ndarray, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path)


def load_image_png(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: image file does not exist")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


# ---------------------------------------------------------------------------
# Catalog manifest


@dataclass(frozen=True)
class CategoryInfo:
    id: int
    name: str
    subcategory: str | None = None


@dataclass(frozen=True)
class ExemplarRecord:
    category: int
    view: int
    image_path: str
    mask_path: str
    area: int | None = None
    ratio: float | None = None
    realistic: bool | None = None


@dataclass(frozen=True)
class CatalogManifest:
    categories: tuple[CategoryInfo, ...]
    exemplars: tuple[ExemplarRecord, ...]
    prune_threshold: float | None = None


def save_catalog(manifest: CatalogManifest, path: str | Path) -> None:
    data = {
        "version": 1,
        "categories": [
            {"id": c.id, "name": c.name, "subcategory": c.subcategory}
            for c in manifest.categories
        ],
        "exemplars": [
            {
                "category": e.category,
                "view": e.view,
                "image": e.image_path,
                "mask": e.mask_path,
                "area": e.area,
                "ratio": e.ratio,
                "realistic": e.realistic,
            }
            for e in manifest.exemplars
        ],
        "prune_threshold": manifest.prune_threshold,
    }
    save_json(data, path)


def load_catalog(path: str | Path, check_paths: bool = True) -> CatalogManifest:
    """Load and validate a catalog manifest.

    Checks: unique category ids, unique (category, view) pairs, exemplar
    categories declared, referenced files present, ratio/realistic fields
    consistent with the recorded prune threshold.
    """
    path = Path(path)
    data = _load_json(path)
    base = path.parent

    categories = []
    seen_ids: set[int] = set()
    for raw in _require(data, "categories", str(path)):
        cid = int(_require(raw, "id", f"{path} category"))
        if cid in seen_ids:
            raise ValidationError(f"{path}: duplicate category id {cid}")
        if cid <= 0:
            raise ValidationError(f"{path}: category ids must be > 0, got {cid}")
        seen_ids.add(cid)
        categories.append(
            CategoryInfo(
                id=cid,
                name=str(_require(raw, "name", f"{path} category {cid}")),
                subcategory=raw.get("subcategory"),
            )
        )

    threshold = data.get("prune_threshold")
    exemplars = []
    seen_keys: set[tuple[int, int]] = set()
    for raw in _require(data, "exemplars", str(path)):
        category = int(_require(raw, "category", f"{path} exemplar"))
        view = int(_require(raw, "view", f"{path} exemplar"))
        key = (category, view)
        context = f"{path} exemplar {key}"
        if key in seen_keys:
            raise ValidationError(f"{context}: duplicate (category, view)")
        seen_keys.add(key)
        if category not in seen_ids:
            raise ValidationError(f"{context}: undeclared category {category}")
        image_path = str(_require(raw, "image", context))
        mask_path = str(_require(raw, "mask", context))
        if check_paths:
            for rel in (image_path, mask_path):
                if not (base / rel).exists():
                    raise ValidationError(f"{context}: missing file {base / rel}")
        ratio = raw.get("ratio")
        realistic = raw.get("realistic")
        if ratio is not None and not (0.0 <= ratio <= 1.0):
            raise ValidationError(f"{context}: ratio {ratio} outside [0, 1]")
        if threshold is not None and ratio is not None and realistic is not None:
            if realistic != (ratio >= threshold):
                raise ValidationError(
                    f"{context}: realistic={realistic} inconsistent with "
                    f"ratio {ratio} at threshold {threshold}"
                )
        exemplars.append(
            ExemplarRecord(
                category=category,
                view=view,
                image_path=image_path,
                mask_path=mask_path,
                area=raw.get("area"),
                ratio=ratio,
                realistic=realistic,
            )
        )
    return CatalogManifest(
        categories=tuple(categories),
        exemplars=tuple(exemplars),
        prune_threshold=threshold,
    )


def materialize_catalog(
    catalog: ExemplarCatalog,
    directory: str | Path,
    names: Mapping[int, str] | None = None,
    prune_threshold: float | None = None,
) -> Path:
    """Write a catalog's images, masks, and manifest under a directory."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    categories = []
    for category in catalog.categories():
        name = names.get(category, f"category-{category}") if names else f"category-{category}"
        categories.append(CategoryInfo(id=category, name=name))
    exemplars = []
    for entry in catalog:
        stem = f"{entry.category:03d}_{entry.view:02d}.png"
        save_image_png(entry.exemplar.pixels, directory / "images" / stem)
        save_mask_png(entry.exemplar.mask, directory / "masks" / stem)
        exemplars.append(
            ExemplarRecord(
                category=entry.category,
                view=entry.view,
                image_path=f"images/{stem}",
                mask_path=f"masks/{stem}",
                area=entry.area,
                ratio=entry.ratio,
                realistic=entry.realistic,
            )
        )
    manifest = CatalogManifest(
        categories=tuple(categories),
        exemplars=tuple(exemplars),
        prune_threshold=prune_threshold,
    )
    manifest_path = directory / "manifest.json"
    save_catalog(manifest, manifest_path)
    return manifest_path


def load_exemplar_catalog(manifest_path: str | Path) -> ExemplarCatalog:
    """Load manifest plus pixel data into an in-memory catalog."""
    manifest_path = Path(manifest_path)
    manifest = load_catalog(manifest_path)
    base = manifest_path.parent
    entries = []
    for record in manifest.exemplars:
        pixels = load_image_png(base / record.image_path)
        mask = load_mask_png(base / record.mask_path)
        exemplar = ExemplarImage(
            category=record.category, view=record.view, pixels=pixels, mask=mask
        )
        entries.append(
            CatalogEntry(
                exemplar=exemplar,
                area=record.area if record.area is not None else mask.area,
                ratio=record.ratio,
                realistic=record.realistic,
            )
        )
    return ExemplarCatalog(entries)


# ---------------------------------------------------------------------------
# Scene annotations


@dataclass(frozen=True)
class ImageInfo:
    id: str
    file: str
    width: int
    height: int
    difficulty: str | None = None
    seed: int | None = None


@dataclass(frozen=True)
class InstanceAnnotation:
    image_id: str
    category: int
    bbox: tuple[float, float, float, float]  # x, y, width, height
    point: tuple[float, float]

    def to_bbox(self) -> BBox:
        return BBox.from_xywh(*self.bbox)


@dataclass(frozen=True)
class SceneAnnotationFile:
    images: tuple[ImageInfo, ...]
    annotations: tuple[InstanceAnnotation, ...]
    shopping_lists: dict[str, ShoppingList] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = {image.id for image in self.images}
        if len(ids) != len(self.images):
            raise ValidationError("duplicate image ids in annotation file")
        tallies: dict[str, list[int]] = {image.id: [] for image in self.images}
        for ann in self.annotations:
            if ann.image_id not in ids:
                raise ValidationError(
                    f"annotation references unknown image {ann.image_id!r}"
                )
            tallies[ann.image_id].append(ann.category)
        for image_id, stated in self.shopping_lists.items():
            if image_id not in ids:
                raise ValidationError(
                    f"shopping list references unknown image {image_id!r}"
                )
        for image_id, categories in tallies.items():
            derived = ShoppingList.from_categories(categories)
            stated = self.shopping_lists.get(image_id, ShoppingList())
            if derived != stated:
                raise ValidationError(
                    f"image {image_id!r}: shopping list {stated.counts} does not "
                    f"match its annotations {derived.counts}"
                )

    def boxes_by_image(self) -> dict[str, list[tuple[BBox, int]]]:
        out: dict[str, list[tuple[BBox, int]]] = {image.id: [] for image in self.images}
        for ann in self.annotations:
            out[ann.image_id].append((ann.to_bbox(), ann.category))
        return out

    def points_by_image(self) -> dict[str, list[tuple[tuple[float, float], int]]]:
        out: dict[str, list[tuple[tuple[float, float], int]]] = {
            image.id: [] for image in self.images
        }
        for ann in self.annotations:
            out[ann.image_id].append((ann.point, ann.category))
        return out


def save_annotations(annotations: SceneAnnotationFile, path: str | Path) -> None:
    data = {
        "version": 1,
        "images": [
            {
                "id": image.id,
                "file": image.file,
                "width": image.width,
                "height": image.height,
                "difficulty": image.difficulty,
                "seed": image.seed,
            }
            for image in annotations.images
        ],
        "annotations": [
            {
                "image_id": ann.image_id,
                "category": ann.category,
                "bbox": list(ann.bbox),
                "point": list(ann.point),
            }
            for ann in annotations.annotations
        ],
        "shopping_lists": {
            image_id: {str(cat): count for cat, count in tally.counts.items()}
            for image_id, tally in annotations.shopping_lists.items()
        },
    }
    save_json(data, path)


def load_annotations(path: str | Path) -> SceneAnnotationFile:
    path = Path(path)
    data = _load_json(path)
    images = tuple(
        ImageInfo(
            id=str(_require(raw, "id", f"{path} image")),
            file=str(_require(raw, "file", f"{path} image")),
            width=int(_require(raw, "width", f"{path} image")),
            height=int(_require(raw, "height", f"{path} image")),
            difficulty=raw.get("difficulty"),
            seed=raw.get("seed"),
        )
        for raw in _require(data, "images", str(path))
    )
    annotations = []
    for raw in _require(data, "annotations", str(path)):
        context = f"{path} annotation"
        bbox = _require(raw, "bbox", context)
        point = _require(raw, "point", context)
        if len(bbox) != 4:
            raise ValidationError(f"{context}: bbox must have 4 entries")
        if len(point) != 2:
            raise ValidationError(f"{context}: point must have 2 entries")
        if bbox[2] < 0 or bbox[3] < 0:
            raise ValidationError(f"{context}: bbox size must be nonnegative")
        annotations.append(
            InstanceAnnotation(
                image_id=str(_require(raw, "image_id", context)),
                category=int(_require(raw, "category", context)),
                bbox=tuple(float(v) for v in bbox),
                point=tuple(float(v) for v in point),
            )
        )
    shopping_lists = {}
    for image_id, counts in _require(data, "shopping_lists", str(path)).items():
        try:
            shopping_lists[str(image_id)] = ShoppingList(
                {int(cat): int(n) for cat, n in counts.items()}
            )
        except ValueError as err:
            raise ValidationError(f"{path} shopping list {image_id!r}: {err}") from err
    try:
        return SceneAnnotationFile(
            images=images,
            annotations=tuple(annotations),
            shopping_lists=shopping_lists,
        )
    except ValidationError as err:
        raise ValidationError(f"{path}: {err}") from err


def annotations_from_scenes(
    scenes: Sequence[tuple["SceneSpec", "SynthesizedScene"]],
    file_pattern: str = "images/{image_id}.png",
) -> SceneAnnotationFile:
    """Build an annotation file for (spec, scene) pairs from the synthesizer."""
    images = []
    annotations = []
    shopping_lists = {}
    for index, (spec, scene) in enumerate(scenes):
        image_id = f"scene_{index:05d}"
        images.append(
            ImageInfo(
                id=image_id,
                file=file_pattern.format(image_id=image_id),
                width=scene.image.shape[1],
                height=scene.image.shape[0],
                difficulty=spec.difficulty,
                seed=spec.seed,
            )
        )
        for (box, category), (point, _) in zip(scene.bboxes, scene.points):
            annotations.append(
                InstanceAnnotation(
                    image_id=image_id,
                    category=category,
                    bbox=tuple(float(v) for v in box.as_xywh()),
                    point=(float(point[0]), float(point[1])),
                )
            )
        shopping_lists[image_id] = scene.shopping_list
    return SceneAnnotationFile(
        images=tuple(images),
        annotations=tuple(annotations),
        shopping_lists=shopping_lists,
    )


# ---------------------------------------------------------------------------
# Predictions


@dataclass(frozen=True)
class PredictionsFile:
    shopping_lists: dict[str, ShoppingList]
    detections: dict[str, list[Detection]] = field(default_factory=dict)


def save_predictions(predictions: PredictionsFile, path: str | Path) -> None:
    data = {
        "version": 1,
        "shopping_lists": {
            image_id: {str(cat): count for cat, count in tally.counts.items()}
            for image_id, tally in predictions.shopping_lists.items()
        },
        "detections": [
            {
                "image_id": image_id,
                "category": det.category,
                "bbox": list(det.box.as_xywh()),
                "score": det.score,
            }
            for image_id, dets in predictions.detections.items()
            for det in dets
        ],
    }
    save_json(data, path)


def load_predictions(path: str | Path) -> PredictionsFile:
    path = Path(path)
    data = _load_json(path)
    shopping_lists = {}
    for image_id, counts in _require(data, "shopping_lists", str(path)).items():
        try:
            shopping_lists[str(image_id)] = ShoppingList(
                {int(cat): int(n) for cat, n in counts.items()}
            )
        except ValueError as err:
            raise ValidationError(f"{path} shopping list {image_id!r}: {err}") from err
    detections: dict[str, list[Detection]] = {}
    for raw in data.get("detections", []):
        context = f"{path} detection"
        bbox = _require(raw, "bbox", context)
        try:
            detection = Detection(
                box=BBox.from_xywh(*(float(v) for v in bbox)),
                category=int(_require(raw, "category", context)),
                score=float(_require(raw, "score", context)),
            )
        except (TypeError, ValueError) as err:
            raise ValidationError(f"{context}: {err}") from err
        detections.setdefault(str(_require(raw, "image_id", context)), []).append(
            detection
        )
    return PredictionsFile(shopping_lists=shopping_lists, detections=detections)
