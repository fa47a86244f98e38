"""End-to-end orchestration used by the ``pipeline`` and ``simulate-e2e``
commands: catalog preparation, pruning, synthesis, density ground truth, and
the simulated selection experiment."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .catalog import ExemplarCatalog
from .config import PipelineConfig
from .dataio import (
    SceneAnnotationFile,
    ValidationError,
    annotations_from_scenes,
    load_exemplar_catalog,
    materialize_catalog,
    save_annotations,
    save_image_png,
)
from .density import KernelParams, generate_density, write_density_map
from .pruning import score_poses, prune_poses
from .reliability import (
    AdaptationReport,
    SceneSample,
    SimulatedCounter,
    SimulatedDetector,
    SimulatedModelNoise,
    run_adaptation,
)
from .reporting import (
    write_adaptation_report,
    write_metrics_report,
    write_prune_report,
)
from .shapes import SHAPE_NAMES, make_shape_catalog
from .synthesis import generate_scenes, scene_seed

__all__ = [
    "load_any_catalog",
    "run_pipeline",
    "run_simulation",
    "samples_from_annotations",
    "samples_from_scenes",
]

_SIM_SEED_STREAM = 997


def load_any_catalog(ref: str | Path) -> ExemplarCatalog:
    """Resolve a catalog reference: ``builtin`` or a manifest path/directory."""
    if str(ref) == "builtin":
        return make_shape_catalog()
    path = Path(ref)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise ValidationError(f"catalog manifest not found at {path}")
    return load_exemplar_catalog(path)


def samples_from_annotations(annotations: SceneAnnotationFile) -> list[SceneSample]:
    boxes = annotations.boxes_by_image()
    points = annotations.points_by_image()
    return [
        SceneSample(
            image_id=image.id,
            width=image.width,
            height=image.height,
            difficulty=image.difficulty,
            gt_boxes=tuple(boxes[image.id]),
            gt_points=tuple(points[image.id]),
            gt_shopping=annotations.shopping_lists.get(image.id),
        )
        for image in annotations.images
    ]


def samples_from_scenes(scenes: Sequence[tuple], prefix: str = "scene") -> list[SceneSample]:
    return [
        SceneSample.from_scene(scene, f"{prefix}_{index:05d}", spec.difficulty)
        for index, (spec, scene) in enumerate(scenes)
    ]


def run_simulation(
    catalog: ExemplarCatalog,
    difficulty: str,
    scene_count: int,
    noise: SimulatedModelNoise,
    seed: int,
    canvas: tuple[int, int] = (256, 256),
    kernel: KernelParams | None = None,
    config: PipelineConfig | None = None,
) -> AdaptationReport:
    """Synthesize a test set and run the full selection procedure against
    simulated models derived from its ground truth."""
    config = config or PipelineConfig()
    pruned = catalog.pruned(config.prune_config())
    scenes = generate_scenes(
        pruned, difficulty, scene_count, seed, canvas, config.placement_config()
    )
    samples = samples_from_scenes(scenes)
    model_seed = scene_seed(seed, _SIM_SEED_STREAM)
    detector = SimulatedDetector(noise, model_seed, max(pruned.categories()))
    counter = SimulatedCounter(noise, model_seed, kernel or config.kernel_params())
    return run_adaptation(
        train_set=samples,
        test_set=samples,
        detector=detector,
        counter=counter,
        cfg=config.adaptation_config(),
    )


def run_pipeline(config: PipelineConfig) -> dict:
    """Run the whole chain under one output directory.

    Steps: prepare and prune the catalog, synthesize scenes for every level,
    write images, annotations, and density ground truth, then run the
    simulated selection experiment and the final evaluation.  Outputs are a
    pure function of the config, so a rerun reproduces them byte for byte
    (report timings are zeroed for that reason).
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    catalog = load_any_catalog(config.catalog)
    pruned_catalog = catalog.pruned(config.prune_config())
    kept, pruned_records = prune_poses(
        score_poses(catalog.pose_records()), config.prune_config()
    )
    write_prune_report(
        kept + pruned_records,
        config.theta_m,
        out / "prune_report.json",
        figures=config.figures,
    )
    names = SHAPE_NAMES if config.catalog == "builtin" else None
    materialize_catalog(
        pruned_catalog, out / "catalog", names=names, prune_threshold=config.theta_m
    )

    scenes = []
    for level_index, level in enumerate(sorted(config.scenes_per_level)):
        count = config.scenes_per_level[level]
        level_seed = scene_seed(config.seed, level_index)
        scenes.extend(
            generate_scenes(
                pruned_catalog,
                level,
                count,
                level_seed,
                config.canvas,
                config.placement_config(),
            )
        )

    annotations = annotations_from_scenes(scenes)
    for image, (_, scene) in zip(annotations.images, scenes):
        save_image_png(scene.image, out / "scenes" / image.file)
    save_annotations(annotations, out / "scenes" / "annotations.json")

    kernel = config.kernel_params()
    density_dir = out / "density"
    density_dir.mkdir(parents=True, exist_ok=True)
    points = annotations.points_by_image()
    for image in annotations.images:
        centers = [point for point, _ in points[image.id]]
        density = generate_density(centers, (image.width, image.height), kernel)
        write_density_map(density, density_dir / f"{image.id}.dmap")

    samples = samples_from_annotations(annotations)
    model_seed = scene_seed(config.seed, _SIM_SEED_STREAM)
    detector = SimulatedDetector(
        config.model_noise(), model_seed, max(pruned_catalog.categories())
    )
    counter = SimulatedCounter(config.model_noise(), model_seed, kernel)
    report = run_adaptation(
        train_set=samples,
        test_set=samples,
        detector=detector,
        counter=counter,
        cfg=config.adaptation_config(),
    )
    write_adaptation_report(
        report,
        out / "adaptation_report.json",
        figures=config.figures,
        include_timings=False,
    )
    write_metrics_report(report.metrics, out / "metrics_report.json", figures=config.figures)

    return {
        "out_dir": str(out),
        "scenes": len(scenes),
        "selected": report.selected_count,
        "rejected": report.rejected_count,
        "metrics": report.metrics.to_dict(),
    }
