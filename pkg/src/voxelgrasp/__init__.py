"""voxelgrasp: per-voxel grasp affordance learning and 6-DoF grasp planning.

Point clouds are voxelized into occupancy grids, one of three volumetric
CNNs (encoder-decoder, U-Net, or the residual U-Net variant) predicts a
per-voxel affordance probability, and a geometric planner converts the
detected region into ranked gripper poses. A deterministic tabletop
harness with procedural synthetic objects evaluates the whole chain.
"""

from .dataset import (
    CATEGORIES,
    DatasetSplit,
    LabeledSample,
    PerturbationConfig,
    add_gaussian_noise,
    augment,
    downsample,
    generate_synthetic,
    load_manifest,
    load_point_cloud,
    sample_to_grids,
    save_point_cloud,
    split_dataset,
    write_manifest,
)
from .errors import ToolkitError
from .evaluation import (
    ExperimentReport,
    GraspOutcome,
    Scene,
    SweepReport,
    TimingReport,
    benchmark_timing,
    category_miou,
    evaluate_grasp,
    iou,
    make_tabletop_scene,
    run_robustness_sweep,
    run_success_experiment,
)
from .geometry import (
    NormalizationTransform,
    PointCloud,
    RigidTransform,
    TablePlane,
    VoxelGrid,
    fibonacci_sphere,
    normalize_cloud,
    pca_main_axis,
    point_segment_distance,
    voxel_mask_to_point_labels,
    voxelize,
)
from .planner import (
    ApproachPath,
    GraspConfiguration,
    GraspPlan,
    GripperModel,
    PlannerConfig,
    choose_cluster_count,
    filter_table,
    format_plan,
    generate_candidates,
    kmeans,
    plan,
    score_path,
    select_best,
    synthesize_pose,
)

__version__ = "0.1.0"
