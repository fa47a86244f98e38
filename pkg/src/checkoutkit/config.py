"""Single-document run configuration for the CLI pipeline.

The config file is a flat JSON object; command-line flags override file
values.  Every tunable is validated against its documented range, and the
resolved configuration is echoed at the start of each run so results are
reproducible from the log alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataio import ValidationError
from .density import KernelParams
from .extraction import MorphParams
from .pruning import PruneConfig
from .reliability import AdaptationConfig, GateConfig, SimulatedModelNoise
from .synthesis import DIFFICULTY_TABLE, PlacementConfig

__all__ = ["PipelineConfig"]


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    catalog: str = "builtin"
    out_dir: str = "pipeline-out"

    # mask extraction
    edge_threshold: float = 0.1
    dilate_radius: int = 3
    erode_radius: int = 3
    min_area_frac: float = 0.001
    median_radius: int = 2

    # pose pruning
    theta_m: float = 0.45

    # scene synthesis
    canvas: tuple[int, int] = (256, 256)
    scale_range: tuple[float, float] = (0.4, 0.7)
    max_occlusion: float = 0.5
    max_translation_retries: int = 100
    max_scene_resamples: int = 20
    scenes_per_level: dict[str, int] = field(
        default_factory=lambda: {"easy": 4, "medium": 4, "hard": 4}
    )

    # density ground truth
    sigma: float = 2.0
    truncation_radius: float = 8.0
    adaptive_sigma: bool = False

    # loss / selection
    detection_weight: float = 1.0
    theta_p: float = 0.95
    nms_iou: float = 0.5
    tally_threshold: float = 0.5
    n_iter: int = 1
    noise: dict = field(
        default_factory=lambda: {
            "miss_prob": 0.1,
            "label_flip_prob": 0.05,
            "false_pos_rate": 0.3,
            "box_jitter": 1.0,
            "score_concentration": 64.0,
        }
    )

    figures: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "canvas", tuple(int(v) for v in self.canvas))
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        unknown_levels = set(self.scenes_per_level) - set(DIFFICULTY_TABLE)
        if unknown_levels:
            raise ValidationError(f"unknown difficulty levels: {sorted(unknown_levels)}")
        if any(count < 0 for count in self.scenes_per_level.values()):
            raise ValidationError("scene counts must be >= 0")
        if self.detection_weight < 0:
            raise ValidationError("detection_weight must be >= 0")
        # Delegate range checks to the owning modules.
        self.morph_params()
        self.prune_config()
        self.placement_config()
        self.kernel_params()
        self.gate_config()
        self.model_noise()

    def morph_params(self) -> MorphParams:
        return MorphParams(
            edge_threshold=self.edge_threshold,
            dilate_radius=self.dilate_radius,
            erode_radius=self.erode_radius,
            min_area_frac=self.min_area_frac,
            median_radius=self.median_radius,
        )

    def prune_config(self) -> PruneConfig:
        return PruneConfig(min_area_ratio=self.theta_m)

    def placement_config(self) -> PlacementConfig:
        return PlacementConfig(
            scale_range=self.scale_range,
            max_occlusion=self.max_occlusion,
            max_translation_retries=self.max_translation_retries,
            max_scene_resamples=self.max_scene_resamples,
        )

    def kernel_params(self) -> KernelParams:
        return KernelParams(
            sigma=self.sigma,
            truncation_radius=self.truncation_radius,
            adaptive=self.adaptive_sigma,
        )

    def gate_config(self) -> GateConfig:
        return GateConfig(score_threshold=self.theta_p, nms_iou=self.nms_iou)

    def adaptation_config(self) -> AdaptationConfig:
        return AdaptationConfig(
            gate=self.gate_config(),
            n_iter=self.n_iter,
            tally_threshold=self.tally_threshold,
            skip_fine_tune_when_empty=True,
        )

    def model_noise(self) -> SimulatedModelNoise:
        return SimulatedModelNoise.from_dict(self.noise)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["canvas"] = list(self.canvas)
        data["scale_range"] = list(self.scale_range)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"{path}: config file does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ValidationError(f"{path}: invalid JSON ({err})") from err
        try:
            return cls.from_dict(data)
        except (TypeError, ValueError) as err:
            raise ValidationError(f"{path}: {err}") from err

    def override(self, **kwargs) -> "PipelineConfig":
        data = self.to_dict()
        data.update({k: v for k, v in kwargs.items() if v is not None})
        return PipelineConfig.from_dict(data)
