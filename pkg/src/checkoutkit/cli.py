"""Command-line interface.

Subcommands: extract-masks, prune, synthesize, density, select, evaluate,
simulate-e2e, and pipeline.  Every run echoes its resolved configuration and
seeds; exit codes are 0 (success), 1 (usage or validation error), and
2 (runtime failure).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig
from .dataio import (
    ValidationError,
    annotations_from_scenes,
    load_annotations,
    load_image_png,
    load_mask_png,
    load_predictions,
    save_annotations,
    save_image_png,
    save_json,
    save_mask_png,
)
from .density import KernelParams, generate_density, write_density_map
from .extraction import MorphParams, extract_mask
from .geometry import ExemplarImage
from .metrics import compute_metrics_report
from .pipeline import (
    load_any_catalog,
    run_pipeline,
    run_simulation,
    samples_from_annotations,
)
from .pruning import PoseRecord, PruneConfig, prune_poses, score_poses
from .reliability import (
    GateConfig,
    SimulatedCounter,
    SimulatedDetector,
    SimulatedModelNoise,
    is_reliable,
)
from .reporting import (
    write_adaptation_report,
    write_metrics_report,
    write_prune_report,
)
from .synthesis import DEFAULT_CANVAS, DIFFICULTY_TABLE, generate_scenes

__all__ = ["CONFIG_ENV_VAR", "cli_main", "main"]

# Default pipeline config path when --config is not given.
CONFIG_ENV_VAR = "CHECKOUTKIT_CONFIG"

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _echo(command: str, settings: dict) -> None:
    print(f"[{command}] config {json.dumps(settings, sort_keys=True)}")


def _parse_stem(stem: str) -> tuple[int, int]:
    parts = stem.split("_")
    if len(parts) >= 2:
        try:
            return int(parts[0]), int(parts[1])
        except ValueError:
            pass
    return 0, 0


def _cmd_extract_masks(args: argparse.Namespace) -> int:
    params = MorphParams(
        edge_threshold=args.edge_threshold,
        dilate_radius=args.dilate,
        erode_radius=args.erode,
        min_area_frac=args.min_area_frac,
        median_radius=args.median,
    )
    _echo("extract-masks", {"input": args.input, "output": args.output, **vars(params)})
    input_dir = Path(args.input)
    if not input_dir.is_dir():
        raise ValidationError(f"{input_dir}: input directory does not exist")
    files = sorted(
        p for p in input_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not files:
        raise ValidationError(f"{input_dir}: no PNG/JPEG images found")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in files:
        category, view = _parse_stem(path.stem)
        image = ExemplarImage(
            category=category, view=view, pixels=load_image_png(path)
        )
        mask = extract_mask(image, params)
        save_mask_png(mask, out_dir / f"{path.stem}.png")
    print(f"[extract-masks] wrote {len(files)} masks to {out_dir}")
    return 0


def _cmd_prune(args: argparse.Namespace) -> int:
    _echo("prune", {"masks": args.masks, "theta_m": args.theta_m, "report": args.report})
    masks_dir = Path(args.masks)
    if not masks_dir.is_dir():
        raise ValidationError(f"{masks_dir}: masks directory does not exist")
    records = []
    for path in sorted(masks_dir.glob("*.png")):
        parts = path.stem.split("_")
        if len(parts) < 2:
            raise ValidationError(
                f"{path}: mask files must be named <category>_<view>.png"
            )
        try:
            category, view = int(parts[0]), int(parts[1])
        except ValueError as err:
            raise ValidationError(f"{path}: {err}") from err
        records.append(
            PoseRecord(category=category, view=view, area=load_mask_png(path).area)
        )
    if not records:
        raise ValidationError(f"{masks_dir}: no mask files found")
    kept, pruned = prune_poses(score_poses(records), PruneConfig(args.theta_m))
    write_prune_report(kept + pruned, args.theta_m, args.report, figures=args.figures)
    print(f"[prune] kept {len(kept)} of {len(records)} poses -> {args.report}")
    return 0


def _cmd_synthesize(args: argparse.Namespace) -> int:
    settings = {
        "catalog": args.catalog,
        "level": args.level,
        "count": args.count,
        "seed": args.seed,
        "out": args.out,
        "canvas": args.canvas,
        "theta_m": args.theta_m,
    }
    _echo("synthesize", settings)
    catalog = load_any_catalog(args.catalog).pruned(PruneConfig(args.theta_m))
    scenes = generate_scenes(
        catalog, args.level, args.count, args.seed, tuple(args.canvas)
    )
    out = Path(args.out)
    annotations = annotations_from_scenes(scenes)
    for image, (_, scene) in zip(annotations.images, scenes):
        save_image_png(scene.image, out / image.file)
    save_annotations(annotations, out / "annotations.json")
    print(f"[synthesize] wrote {len(scenes)} scenes to {out}")
    return 0


def _cmd_density(args: argparse.Namespace) -> int:
    _echo(
        "density",
        {
            "annotations": args.annotations,
            "sigma": args.sigma,
            "truncation": args.truncation,
            "adaptive": args.adaptive,
            "out": args.out,
        },
    )
    annotations = load_annotations(args.annotations)
    kernel = KernelParams(
        sigma=args.sigma, truncation_radius=args.truncation, adaptive=args.adaptive
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points = annotations.points_by_image()
    for image in annotations.images:
        centers = [point for point, _ in points[image.id]]
        density = generate_density(centers, (image.width, image.height), kernel)
        write_density_map(density, out / f"{image.id}.dmap")
    print(f"[density] wrote {len(annotations.images)} maps to {out}")
    return 0


def _load_model_sim(path: str) -> dict:
    sim_path = Path(path)
    if not sim_path.exists():
        raise ValidationError(f"{sim_path}: model-sim config does not exist")
    try:
        data = json.loads(sim_path.read_text())
    except json.JSONDecodeError as err:
        raise ValidationError(f"{sim_path}: invalid JSON ({err})") from err
    return data


def _cmd_select(args: argparse.Namespace) -> int:
    sim = _load_model_sim(args.model_sim)
    settings = {
        "dataset": args.dataset,
        "model_sim": sim,
        "theta_p": args.theta_p,
        "nms_iou": args.nms_iou,
    }
    _echo("select", settings)
    dataset = Path(args.dataset)
    annotations_path = dataset if dataset.suffix == ".json" else dataset / "annotations.json"
    annotations = load_annotations(annotations_path)
    samples = samples_from_annotations(annotations)
    noise = SimulatedModelNoise.from_dict(sim.get("noise", {}))
    kernel = KernelParams(**sim.get("kernel", {}))
    seed = int(sim.get("seed", 0))
    max_category = max(
        (ann.category for ann in annotations.annotations), default=1
    )
    detector = SimulatedDetector(noise, seed, max_category)
    counter = SimulatedCounter(noise, seed, kernel)
    cfg = GateConfig(score_threshold=args.theta_p, nms_iou=args.nms_iou)
    selected, rejected, diagnostics = [], [], {}
    for sample in samples:
        verdict, diag = is_reliable(sample, detector, counter, cfg)
        (selected if verdict else rejected).append(sample.image_id)
        diagnostics[sample.image_id] = diag.to_dict()
    save_json(
        {
            "theta_p": args.theta_p,
            "nms_iou": args.nms_iou,
            "seed": seed,
            "selected": selected,
            "rejected": rejected,
            "diagnostics": diagnostics,
        },
        args.report,
    )
    print(
        f"[select] {len(selected)} reliable / {len(samples)} images -> {args.report}"
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    _echo("evaluate", {"pred": args.pred, "gt": args.gt, "report": args.report})
    gt = load_annotations(args.gt)
    pred = load_predictions(args.pred)
    preds, gts, levels, image_ids = [], [], [], []
    for image in gt.images:
        if image.id not in pred.shopping_lists:
            raise ValidationError(f"prediction file has no entry for image {image.id!r}")
        preds.append(pred.shopping_lists[image.id])
        gts.append(gt.shopping_lists[image.id])
        levels.append(image.difficulty or "all")
        image_ids.append(image.id)
    detections = pred.detections if pred.detections else None
    gt_boxes = gt.boxes_by_image() if pred.detections else None
    report = compute_metrics_report(
        preds, gts, detections, gt_boxes, levels=levels, image_ids=image_ids
    )
    write_metrics_report(report, args.report, figures=args.figures)
    print(
        f"[evaluate] cAcc={report.c_acc:.4f} ACD={report.acd:.4f} "
        f"mCCD={report.mccd:.4f} mCIoU={report.mciou:.4f} -> {args.report}"
    )
    return 0


def _cmd_simulate_e2e(args: argparse.Namespace) -> int:
    noise_dict = (
        _load_model_sim(args.noise) if args.noise else PipelineConfig().noise
    )
    settings = {
        "level": args.level,
        "scenes": args.scenes,
        "noise": noise_dict,
        "seed": args.seed,
        "canvas": args.canvas,
        "catalog": args.catalog,
    }
    _echo("simulate-e2e", settings)
    catalog = load_any_catalog(args.catalog)
    noise = SimulatedModelNoise.from_dict(noise_dict)
    report = run_simulation(
        catalog,
        args.level,
        args.scenes,
        noise,
        args.seed,
        canvas=tuple(args.canvas),
    )
    write_adaptation_report(report, args.report, figures=args.figures)
    precision = (
        "n/a" if report.selection_precision is None else f"{report.selection_precision:.4f}"
    )
    print(
        f"[simulate-e2e] selected {report.selected_count}/"
        f"{report.selected_count + report.rejected_count} scenes, "
        f"precision {precision} -> {args.report}"
    )
    return 0


def _cmd_pipeline(args: argparse.Namespace) -> int:
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    config = PipelineConfig.from_file(config_path) if config_path else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.catalog is not None:
        overrides["catalog"] = args.catalog
    if args.no_figures:
        overrides["figures"] = False
    if overrides:
        config = config.override(**overrides)
    _echo("pipeline", config.to_dict())
    summary = run_pipeline(config)
    print(f"[pipeline] {json.dumps(summary, sort_keys=True)}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="checkoutkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = commands.add_parser("extract-masks", help="extract foreground masks from exemplar photos")
    p.add_argument("--input", required=True, help="directory of PNG/JPEG exemplar images")
    p.add_argument("--output", required=True, help="directory for mask PNGs")
    p.add_argument("--edge-threshold", type=float, default=0.1)
    p.add_argument("--dilate", type=int, default=3)
    p.add_argument("--erode", type=int, default=3)
    p.add_argument("--min-area-frac", type=float, default=0.001)
    p.add_argument("--median", type=int, default=2)
    p.set_defaults(func=_cmd_extract_masks)

    p = commands.add_parser("prune", help="score and prune exemplar poses by mask area ratio")
    p.add_argument("--masks", required=True, help="directory of <category>_<view>.png masks")
    p.add_argument("--theta-m", type=float, default=0.45, help="minimum area ratio to keep")
    p.add_argument("--report", required=True, help="output report JSON path")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=_cmd_prune)

    p = commands.add_parser("synthesize", help="compose checkout scenes from a catalog")
    p.add_argument("--catalog", default="builtin", help="catalog directory or 'builtin'")
    p.add_argument("--level", required=True, choices=sorted(DIFFICULTY_TABLE))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--canvas", type=int, nargs=2, default=list(DEFAULT_CANVAS), metavar=("W", "H")
    )
    p.add_argument("--theta-m", type=float, default=0.45)
    p.set_defaults(func=_cmd_synthesize)

    p = commands.add_parser("density", help="generate ground-truth density maps")
    p.add_argument("--annotations", required=True)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--truncation", type=float, default=8.0)
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_density)

    p = commands.add_parser("select", help="gate a dataset with simulated models")
    p.add_argument("--dataset", required=True, help="synthesize output dir or annotations JSON")
    p.add_argument("--model-sim", required=True, help="simulated model config JSON")
    p.add_argument("--theta-p", type=float, default=0.95)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_select)

    p = commands.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=_cmd_evaluate)

    p = commands.add_parser("simulate-e2e", help="end-to-end simulated selection experiment")
    p.add_argument("--level", required=True, choices=sorted(DIFFICULTY_TABLE))
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--noise", help="noise config JSON (defaults to the pipeline noise)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--canvas", type=int, nargs=2, default=[256, 256], metavar=("W", "H"))
    p.add_argument("--catalog", default="builtin")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=_cmd_simulate_e2e)

    p = commands.add_parser("pipeline", help="run the full chain from one config file")
    p.add_argument(
        "--config",
        help=f"pipeline config JSON (falls back to ${CONFIG_ENV_VAR}, then defaults)",
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--catalog")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "command", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
