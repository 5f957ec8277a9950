"""Metrics, a deterministic geometric tabletop harness, robustness sweeps,
and timing benchmarks.

The grasp evaluator replaces physics with a three-part geometric proxy on
the top-ranked configuration: a collision-free final approach sweep, a
non-empty finger closure, and an aperture fit. Region geometry (grasp
frame: u along the approach measured from the grasp point, v along the
closing axis, w transverse; L = finger_length, A = max_aperture,
fw = finger_width):

    sweep box          u in [-1.5 L, 0.5 L], |v| <= A/2 + fw, |w| <= fw/2
    closing corridor   u in [-L/2, L/2], |w| <= fw/2
    closure set        corridor and |v| <= A/2
    fit set            corridor and |v| <= A

approach_collision: any object point inside the sweep box but outside the
corridor. table_collision: any sweep-box corner below the table. The
closure set must hold at least max(5, round(20 n / 5000)) points; the fit
set's v-extent must not exceed the aperture.
"""

from __future__ import annotations

import math
import time
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledSample, PerturbationConfig, generate_synthetic
from .errors import (
    DegenerateInput,
    NoAffordance,
    NoFeasibleApproach,
    NoPlan,
    ShapeError,
    TableCollision,
)
from .geometry import (
    PointCloud,
    RigidTransform,
    TablePlane,
    normalize_cloud,
    rotation_about_axis,
    voxel_mask_to_point_labels,
    voxelize,
)
from .planner import GraspPlan, GripperModel, PlannerConfig, plan

DEFAULT_TABLE = TablePlane(np.array([0.0, 0.0, 1.0]), 0.0)
CLOSURE_BASE_COUNT = 20
CLOSURE_BASE_POINTS = 5000
CLOSURE_MIN_COUNT = 5

FAILURE_REASONS = (
    "none",
    "approach_collision",
    "table_collision",
    "empty_closure",
    "aperture_exceeded",
)


@dataclass(frozen=True)
class Scene:
    """A posed object on a table, with the gripper that will grasp it."""

    sample: LabeledSample
    object_pose: RigidTransform
    table: TablePlane
    gripper: GripperModel

    def __post_init__(self):
        world = self.object_pose.apply(self.sample.cloud.points)
        if float(self.table.signed_distance(world).min()) < -1e-6:
            raise ValueError("object penetrates the table plane")

    def world_cloud(self) -> PointCloud:
        return PointCloud(
            self.object_pose.apply(self.sample.cloud.points), self.sample.cloud.labels
        )


@dataclass(frozen=True)
class GraspOutcome:
    success: bool
    failure_reason: str = "none"

    def __post_init__(self):
        if self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")
        if self.success != (self.failure_reason == "none"):
            raise ValueError("success iff failure_reason == 'none'")


@dataclass(frozen=True)
class SweepReport:
    axis: str
    levels: tuple
    success_rates: tuple
    trials_per_level: int

    def __post_init__(self):
        if self.axis not in ("keep_probability", "noise_sigma"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if len(self.levels) != len(self.success_rates):
            raise ValueError("levels and success_rates lengths differ")
        if any(not 0.0 <= r <= 1.0 for r in self.success_rates):
            raise ValueError("success rates must lie in [0, 1]")
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "success_rates", tuple(self.success_rates))


# ---------------------------------------------------------------------------
# metrics


def iou(pred, truth) -> float:
    """|pred AND truth| / |pred OR truth| over binary label vectors.

    Defined as 1.0 when both are empty.
    """
    p = np.asarray(pred).astype(bool).ravel()
    t = np.asarray(truth).astype(bool).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"label lengths differ: {p.shape[0]} vs {t.shape[0]}")
    union = int(np.logical_or(p, t).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def category_miou(per_category: dict):
    """Unweighted per-category means plus the mean over all objects.

    Empty categories are skipped with a warning. Returns
    (dict category -> mean IoU, overall mean).
    """
    means = {}
    everything = []
    for cat, values in per_category.items():
        values = list(values)
        if not values:
            warnings.warn(f"category {cat!r} has no IoU values; skipped", stacklevel=2)
            continue
        means[cat] = float(np.mean(values))
        everything.extend(values)
    if not everything:
        raise ShapeError("no IoU values in any category")
    return means, float(np.mean(everything))


# ---------------------------------------------------------------------------
# geometric grasp proxy


def closure_threshold(n_points: int) -> int:
    return max(CLOSURE_MIN_COUNT, round(CLOSURE_BASE_COUNT * n_points / CLOSURE_BASE_POINTS))


def evaluate_grasp(scene: Scene, grasp_plan: GraspPlan) -> GraspOutcome:
    """Run the three-part geometric proxy on the plan's top configuration."""
    if not grasp_plan.configurations:
        raise NoPlan("cannot evaluate an empty plan")
    cfg = grasp_plan.best()
    g = scene.gripper
    rot = cfg.rotation()
    approach, closing = rot[:, 2], rot[:, 1]
    transverse = rot[:, 0]
    pts = scene.world_cloud().points
    rel = pts - cfg.approach.grasp_point
    u = rel @ approach
    v = rel @ closing
    w = rel @ transverse

    half_l = g.finger_length / 2.0
    in_sweep = (
        (u >= -3.0 * half_l)
        & (u <= half_l)
        & (np.abs(v) <= g.max_aperture / 2.0 + g.finger_width)
        & (np.abs(w) <= g.finger_width / 2.0)
    )
    in_corridor = (np.abs(u) <= half_l) & (np.abs(w) <= g.finger_width / 2.0)
    if (in_sweep & ~in_corridor).any():
        return GraspOutcome(False, "approach_collision")

    corners = _sweep_corners(cfg.approach.grasp_point, approach, closing, transverse, g)
    if float(scene.table.signed_distance(corners).min()) < -1e-9:
        return GraspOutcome(False, "table_collision")

    closure = in_corridor & (np.abs(v) <= g.max_aperture / 2.0)
    if int(closure.sum()) < closure_threshold(len(pts)):
        return GraspOutcome(False, "empty_closure")

    fit = in_corridor & (np.abs(v) <= g.max_aperture)
    v_fit = v[fit]
    if float(v_fit.max() - v_fit.min()) > g.max_aperture:
        return GraspOutcome(False, "aperture_exceeded")
    return GraspOutcome(True)


def _sweep_corners(grasp_point, approach, closing, transverse, g: GripperModel):
    us = (-1.5 * g.finger_length, 0.5 * g.finger_length)
    vs = g.max_aperture / 2.0 + g.finger_width
    ws = g.finger_width / 2.0
    return np.array(
        [
            grasp_point + uu * approach + vv * closing + ww * transverse
            for uu in us
            for vv in (-vs, vs)
            for ww in (-ws, ws)
        ]
    )


# ---------------------------------------------------------------------------
# scenes and experiments


def make_tabletop_scene(
    sample: LabeledSample,
    seed: int,
    table: TablePlane = DEFAULT_TABLE,
    gripper: GripperModel | None = None,
    workspace_radius: float = 0.4,
) -> Scene:
    """Pose a sample on the table: seeded planar placement plus z-rotation,
    dropped so the lowest point touches the plane."""
    rng = np.random.default_rng([seed, 0x5CEE])
    yaw = rng.uniform(0.0, 2.0 * math.pi)
    xy = rng.uniform(-workspace_radius, workspace_radius, size=2)
    rot = rotation_about_axis(table.normal, yaw)
    rotated = sample.cloud.points @ rot.T
    lift = table.offset - float((rotated @ table.normal).min())
    b1, b2 = _plane_basis(table.normal)
    translation = xy[0] * b1 + xy[1] * b2 + table.normal * lift
    pose = RigidTransform(rot, translation)
    return Scene(sample, pose, table, gripper or GripperModel())


def _plane_basis(normal):
    pick = int(np.argmin(np.abs(normal)))
    seed = np.zeros(3)
    seed[pick] = 1.0
    b1 = seed - (seed @ normal) * normal
    b1 /= np.linalg.norm(b1)
    return b1, np.cross(normal, b1)


@dataclass(frozen=True)
class ExperimentReport:
    """Per-category success rates in the style of a success-rate table."""

    per_category: dict
    trials_per_category: int
    failure_histogram: dict = field(default_factory=dict)

    @property
    def average(self) -> float:
        return float(np.mean(list(self.per_category.values())))

    @property
    def total_trials(self) -> int:
        return self.trials_per_category * len(self.per_category)

    def to_text(self) -> str:
        rows = ["Category\tSuccess rate (%)\tSuccess / Total"]
        for cat, rate in self.per_category.items():
            n_ok = round(rate * self.trials_per_category)
            rows.append(f"{cat}\t{rate * 100:.0f}\t{n_ok} / {self.trials_per_category}")
        total_ok = round(self.average * self.total_trials)
        rows.append(f"Average\t{self.average * 100:.0f}\t{total_ok} / {self.total_trials}")
        for reason, count in sorted(self.failure_histogram.items()):
            rows.append(f"# failure {reason}: {count}")
        return "\n".join(rows) + "\n"


def _predict_labels(params, world_cloud: PointCloud) -> np.ndarray:
    """Network affordance labels for a world-frame cloud."""
    from .nets import forward  # local import keeps evaluation usable without nets

    r = params.spec.input_resolution
    normalized, _ = normalize_cloud(world_cloud, r)
    grid = voxelize(normalized, r)
    probs, _ = forward(params, grid.values[None, None], mode="infer")
    prob_grid = type(grid)(np.asarray(probs[0, 0], dtype=np.float64).clip(0.0, 1.0))
    return voxel_mask_to_point_labels(normalized, prob_grid, threshold=0.5)


def run_single_trial(
    category: str,
    trial: int,
    seed: int,
    mode: str = "ground_truth_labels",
    params=None,
    gripper: GripperModel | None = None,
    planner_config: PlannerConfig | None = None,
    n_points: int = 1500,
    perturbation: PerturbationConfig | None = None,
    table: TablePlane = DEFAULT_TABLE,
) -> str:
    """One seeded scene -> plan -> proxy evaluation; returns the reason
    string ('none' on success). Planner-stage failures are folded in as
    their own reason strings."""
    cat_code = zlib.crc32(category.encode("utf-8")) & 0x7FFFFFFF
    sample_seed = int(np.random.default_rng([seed, cat_code, trial]).integers(2**31))
    sample = generate_synthetic(category, sample_seed, n_points)
    if perturbation is not None:
        cloud = perturbation.apply(sample.cloud)
        sample = LabeledSample(sample.id, sample.category, cloud)
    scene = make_tabletop_scene(
        sample, seed=sample_seed + trial + 1, table=table, gripper=gripper
    )
    world = scene.world_cloud()
    if mode == "network":
        if params is None:
            raise ValueError("mode='network' needs trained parameters")
        labels = _predict_labels(params, world)
    elif mode == "ground_truth_labels":
        labels = world.labels
    else:
        raise ValueError(f"unknown mode {mode!r}")
    cfg = planner_config or PlannerConfig(seed=sample_seed)
    try:
        grasp_plan = plan(world, scene.table, scene.gripper, cfg, labels=labels)
    except (NoAffordance, DegenerateInput):
        return "degenerate_affordance"
    except NoFeasibleApproach:
        return "no_feasible_approach"
    except TableCollision:
        return "table_collision"
    return evaluate_grasp(scene, grasp_plan).failure_reason


def run_success_experiment(
    categories,
    trials_per_category: int,
    seed: int,
    mode: str = "ground_truth_labels",
    params=None,
    gripper: GripperModel | None = None,
    planner_config: PlannerConfig | None = None,
    n_points: int = 1500,
    perturbation: PerturbationConfig | None = None,
    jobs: int = 1,
) -> ExperimentReport:
    """Seeded scenes per category -> per-category and average success rates
    plus a failure-reason histogram. Trials are independent; randomness
    derives from (seed, category, trial), so the report does not depend on
    execution order or worker count."""
    if trials_per_category < 1:
        raise ValueError("need at least one trial per category")
    tasks = [
        (category, trial)
        for category in categories
        for trial in range(trials_per_category)
    ]
    kwargs = dict(
        seed=seed,
        mode=mode,
        params=params,
        gripper=gripper,
        planner_config=planner_config,
        n_points=n_points,
        perturbation=perturbation,
    )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reasons = list(
                pool.map(_trial_star, [(c, t, kwargs) for c, t in tasks], chunksize=4)
            )
    else:
        reasons = [run_single_trial(c, t, **kwargs) for c, t in tasks]

    per_category = {}
    histogram = {}
    for (category, _), reason in zip(tasks, reasons):
        per_category.setdefault(category, []).append(reason == "none")
        if reason != "none":
            histogram[reason] = histogram.get(reason, 0) + 1
    rates = {c: float(np.mean(v)) for c, v in per_category.items()}
    return ExperimentReport(rates, trials_per_category, histogram)


def _trial_star(item):
    category, trial, kwargs = item
    return run_single_trial(category, trial, **kwargs)


def run_robustness_sweep(
    axis: str,
    levels,
    trials: int,
    seed: int,
    categories=("Mug", "Chair", "Knife", "Guitar", "Lamp"),
    jobs: int = 1,
    **experiment_kwargs,
) -> SweepReport:
    """Success rates across perturbation levels, paired seeds per level.

    axis 'keep_probability' expects descending levels starting at 1.0;
    'noise_sigma' ascending levels starting at 0.0-ish. The unperturbed
    level reproduces the baseline experiment exactly (same seeds).
    """
    levels = list(levels)
    if axis == "keep_probability":
        if any(a < b for a, b in zip(levels, levels[1:])):
            raise ValueError("keep_probability levels must be non-ascending")
    elif axis == "noise_sigma":
        if any(a > b for a, b in zip(levels, levels[1:])):
            raise ValueError("noise_sigma levels must be non-descending")
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    rates = []
    for level in levels:
        if axis == "keep_probability":
            pert = PerturbationConfig(keep_probability=level, seed=seed + 7919)
        else:
            pert = PerturbationConfig(noise_sigma=level, seed=seed + 7919)
        report = run_success_experiment(
            categories,
            trials,
            seed,
            perturbation=pert,
            jobs=jobs,
            **experiment_kwargs,
        )
        rates.append(sum(report.per_category.values()) / len(report.per_category))
    return SweepReport(axis, tuple(levels), tuple(rates), trials)


def format_sweep(report: SweepReport, extent: float | None = None) -> str:
    """Two-column level/rate series; noise sweeps get a units comment
    (sigma is a fraction of object extent; a mm reading is also given)."""
    rows = [f"{report.axis}\tsuccess_rate"]
    for level, rate in zip(report.levels, report.success_rates):
        rows.append(f"{level:.9g}\t{rate:.9g}")
    rows.append(f"# trials per level: {report.trials_per_level}")
    if report.axis == "noise_sigma":
        nominal = extent or 1.0
        mm = ", ".join(f"{level * 300.0 / nominal:.1f}" for level in report.levels)
        rows.append(
            "# sigma in object-extent fractions; for a 300 mm object the "
            f"levels read (mm): {mm}"
        )
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class TimingReport:
    """Mean and standard deviation of wall time per pipeline stage."""

    stages: dict  # name -> (mean_s, std_s)
    repetitions: int

    @property
    def total_mean(self) -> float:
        return float(sum(m for m, _ in self.stages.values()))

    def to_text(self) -> str:
        rows = ["stage\tmean_s\tstd_s"]
        for name, (mean, std) in self.stages.items():
            rows.append(f"{name}\t{mean:.6f}\t{std:.6f}")
        rows.append(f"total\t{self.total_mean:.6f}\t")
        rows.append(f"# repetitions: {self.repetitions}")
        return "\n".join(rows) + "\n"


def benchmark_timing(
    sample: LabeledSample,
    params,
    repetitions: int = 10,
    gripper: GripperModel | None = None,
    planner_config: PlannerConfig | None = None,
    table: TablePlane = DEFAULT_TABLE,
) -> TimingReport:
    """Wall-time means for voxelization, network forward, and planning.

    Planning runs on the sample's own labels so the benchmark does not
    depend on how well the checkpoint was trained. Per-repetition totals
    are the sum of the three stage times by construction.
    """
    from .nets import forward

    if repetitions < 10:
        raise ValueError("need at least 10 repetitions")
    gripper = gripper or GripperModel()
    cfg = planner_config or PlannerConfig(seed=0)
    scene = make_tabletop_scene(sample, seed=0, table=table, gripper=gripper)
    world = scene.world_cloud()
    r = params.spec.input_resolution
    times = {"voxelize": [], "forward": [], "plan": []}
    for _ in range(repetitions):
        t0 = time.perf_counter()
        normalized, _ = normalize_cloud(world, r)
        grid = voxelize(normalized, r)
        t1 = time.perf_counter()
        forward(params, grid.values[None, None], mode="infer")
        t2 = time.perf_counter()
        plan(world, table, gripper, cfg, labels=world.labels)
        t3 = time.perf_counter()
        times["voxelize"].append(t1 - t0)
        times["forward"].append(t2 - t1)
        times["plan"].append(t3 - t2)
    stages = {
        name: (float(np.mean(vals)), float(np.std(vals))) for name, vals in times.items()
    }
    return TimingReport(stages, repetitions)
