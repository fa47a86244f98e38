"""checkoutkit: synthetic checkout-scene data tooling.

Builds training data for visual item tallying: cuts foreground masks from
isolated-item photos, prunes physically implausible poses, composes occlusion-
constrained checkout scenes with full annotations, generates density ground
truth, and selects reliable unlabeled images by agreement between a counting
model and a detection model.  Ships a full evaluation metric suite and
simulated models for end-to-end verification.
"""

__version__ = "0.1.0"

from .catalog import CatalogEntry, ExemplarCatalog
from .density import (
    DensityMap,
    KernelParams,
    count_from_density,
    generate_density,
    read_density_map,
    round_count,
    write_density_map,
)
from .extraction import (
    EdgeMap,
    MorphParams,
    coarse_mask,
    cut_exemplar,
    extract_edges,
    extract_mask,
    refine_mask,
)
from .geometry import (
    AffinePose,
    BBox,
    BinaryMask,
    Detection,
    ExemplarImage,
    connected_components,
    iou,
    mask_bbox,
    mask_centroid,
    transform_mask,
)
from .losses import (
    DetectionPrediction,
    DetectionTarget,
    ImageLossInput,
    LossBreakdown,
    classification_loss,
    decode_box,
    density_loss,
    encode_box,
    regression_loss,
    total_loss,
)
from .metrics import (
    MetricsReport,
    ShoppingList,
    acd,
    average_precision,
    checkout_accuracy,
    compute_metrics_report,
    counting_distance,
    map50,
    mccd,
    mciou,
    mmap,
    tally_from_detections,
)
from .pruning import PoseRecord, PruneConfig, pose_ratios, prune_poses, score_poses
from .reliability import (
    AdaptationConfig,
    AdaptationReport,
    GateConfig,
    TrainingHooks,
    SceneSample,
    SimulatedModelNoise,
    is_reliable,
    nms,
    pseudo_label,
    run_adaptation,
    select_reliable,
    simulated_counter,
    simulated_detector,
)
from .shapes import make_shape_catalog
from .synthesis import (
    DIFFICULTY_TABLE,
    PlacementConfig,
    PlacementError,
    SceneInstance,
    SceneSpec,
    SynthesizedScene,
    compose_scene,
    generate_scenes,
    occlusion_rate,
    place_instances,
    render_hook,
    sample_scene_spec,
    scene_spec_for_seed,
    synthesize_scene,
)
