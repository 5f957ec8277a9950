"""6-DoF grasp planning from a labeled point cloud.

Pipeline: the affordance points are clustered into grasp candidates
(k-means, cluster count from affordance extent vs gripper aperture); for
each candidate a Fibonacci sphere of approach starts is generated, paths
starting under the table are dropped, and each survivor is scored by

    score = 2 (pi - a) / pi * sum_i min(1, 1 / (d_i^2 + eps))

with d_i the distance from object point i to the closed approach segment
and a the angle between the path and the affordance main axis folded into
[0, pi/2]. Lower is better: clear paths orthogonal to the main axis win.
Cluster winners are ranked and turned into end-effector poses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInput,
    NoAffordance,
    NoFeasibleApproach,
    TableCollision,
    TooManyClusters,
)
from .geometry import (
    PointCloud,
    TablePlane,
    euler_zyx_from_matrix,
    fibonacci_sphere,
    fix_axis_sign,
    matrix_from_euler_zyx,
    pca_main_axis,
    points_segment_distances,
    rotation_about_axis,
)


@dataclass(frozen=True)
class GripperModel:
    """Parallel-plate gripper dimensions, world units."""

    finger_width: float = 0.04
    max_aperture: float = 0.30
    finger_length: float = 0.25
    palm_depth: float = 0.06

    def __post_init__(self):
        for name in ("finger_width", "max_aperture", "finger_length", "palm_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_aperture <= self.finger_width:
            raise ValueError("max_aperture must exceed finger_width")


@dataclass(frozen=True)
class PlannerConfig:
    sphere_samples: int = 256
    sphere_radius_factor: float = 1.5
    epsilon: float = 0.01
    max_clusters: int = 5
    kmeans_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.sphere_samples < 8:
            raise ValueError("sphere_samples must be at least 8")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class ApproachPath:
    """A scored linear approach: sphere start point toward a grasp point."""

    start: np.ndarray
    grasp_point: np.ndarray
    score: float
    angle_to_axis: float

    def __post_init__(self):
        s = np.asarray(self.start, dtype=float).reshape(3)
        g = np.asarray(self.grasp_point, dtype=float).reshape(3)
        if np.array_equal(s, g):
            raise ValueError("approach start and grasp point coincide")
        if self.score < 0:
            raise ValueError("score must be nonnegative")
        if not 0.0 <= self.angle_to_axis <= math.pi / 2 + 1e-12:
            raise ValueError("angle_to_axis must lie in [0, pi/2]")
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "grasp_point", g)

    @property
    def direction(self) -> np.ndarray:
        d = self.grasp_point - self.start
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class GraspConfiguration:
    """End-effector pose for one approach path.

    pose = (x, y, z, roll, pitch, yaw), ZYX convention
    (R = Rz(yaw) Ry(pitch) Rx(roll)); the gripper body frame has z along
    the approach direction and y along the closing axis.
    """

    pose: tuple
    approach: ApproachPath
    cluster_id: int
    roll_adjustment: float = 0.0
    degenerate_axis: bool = False

    def rotation(self) -> np.ndarray:
        roll, pitch, yaw = self.pose[3], self.pose[4], self.pose[5]
        return matrix_from_euler_zyx(roll, pitch, yaw)

    def position(self) -> np.ndarray:
        return np.array(self.pose[:3], dtype=float)


@dataclass(frozen=True)
class GraspPlan:
    """Cluster winners ranked ascending by score, plus per-cluster counts."""

    configurations: tuple
    diagnostics: tuple = ()

    def __post_init__(self):
        scores = [c.approach.score for c in self.configurations]
        if any(a > b for a, b in zip(scores, scores[1:])):
            raise ValueError("plan configurations must be sorted by score")
        object.__setattr__(self, "configurations", tuple(self.configurations))
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))

    def best(self) -> GraspConfiguration:
        return self.configurations[0]


def format_plan(plan: GraspPlan) -> str:
    """One line per configuration: cluster_id, score, x y z roll pitch yaw."""
    rows = []
    for c in plan.configurations:
        fields = [str(c.cluster_id), f"{c.approach.score:.9g}"] + [
            f"{v:.9g}" for v in c.pose
        ]
        rows.append("\t".join(fields))
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# clustering


def kmeans(points, m: int, iters: int = 50, seed: int = 0, return_inertia: bool = False):
    """Lloyd's algorithm with seeded k-means++ initialization.

    Returns (centroids (m, 3), assignments (n,)). Emptied clusters are
    re-seeded at the point farthest from its centroid. Stops at an
    assignment fixpoint or after `iters` iterations. With
    `return_inertia`, the per-iteration inertia after each assignment
    step (a non-increasing sequence) is returned as a third value.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if m < 1:
        raise ValueError("m must be at least 1")
    if m > n:
        raise TooManyClusters(f"{m} clusters requested for {n} points")
    rng = np.random.default_rng(seed)

    centroids = np.empty((m, 3))
    centroids[0] = pts[rng.integers(n)]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, m):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = pts[rng.integers(n)]
        else:
            r = rng.random() * total
            centroids[j] = pts[np.searchsorted(np.cumsum(d2), r)]
        d2 = np.minimum(d2, ((pts - centroids[j]) ** 2).sum(axis=1))

    assignments = np.full(n, -1, dtype=np.int64)
    inertia = []
    for _ in range(iters):
        dist2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist2.argmin(axis=1)
        inertia.append(float(dist2[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for j in range(m):
            members = pts[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                far = int(dist2.min(axis=1).argmax())
                centroids[j] = pts[far]
    if return_inertia:
        return centroids, assignments, inertia
    return centroids, assignments


def choose_cluster_count(affordance_points, gripper: GripperModel, max_clusters: int = 5) -> int:
    """Cluster count from how many apertures span the affordance part.

    The extent is measured along the part's main axis (rotation invariant),
    rounded, and clamped into [1, max_clusters].
    """
    pts = np.asarray(affordance_points, dtype=float)
    if pts.shape[0] == 0:
        raise NoAffordance("no affordance points")
    if pts.shape[0] < 2 or not (pts != pts[0]).any():
        extent = 0.0
    else:
        axis = pca_main_axis(pts)
        proj = pts @ axis
        extent = float(proj.max() - proj.min())
    m = int(math.floor(extent / gripper.max_aperture + 0.5))
    return max(1, min(m, max_clusters))


# ---------------------------------------------------------------------------
# approach candidates


def bounding_sphere_radius(points) -> float:
    """Radius of the centroid-centered sphere enclosing the points."""
    pts = np.asarray(points, dtype=float)
    return float(np.sqrt(((pts - pts.mean(axis=0)) ** 2).sum(axis=1).max()))


def generate_candidates(grasp_point, cloud: PointCloud, config: PlannerConfig, orientation=None):
    """Unscored approach starts: a Fibonacci sphere around the grasp point.

    Sphere radius = sphere_radius_factor x the cloud's bounding-sphere
    radius. `orientation` optionally rotates the lattice (it is arbitrary);
    starts are returned as an (N, 3) array, each defining the path
    start -> grasp_point.
    """
    gp = np.asarray(grasp_point, dtype=float).reshape(3)
    radius = config.sphere_radius_factor * bounding_sphere_radius(cloud.points)
    if radius <= 0.0:
        raise DegenerateInput("cloud has zero spatial extent")
    starts = fibonacci_sphere(config.sphere_samples, center=(0.0, 0.0, 0.0), radius=radius)
    if orientation is not None:
        starts = starts @ np.asarray(orientation, dtype=float).T
    return starts + gp


def filter_table(starts: np.ndarray, table: TablePlane) -> np.ndarray:
    """Keep starts on or above the table plane."""
    keep = table.signed_distance(starts) >= 0.0
    if not keep.any():
        raise NoFeasibleApproach("every approach start lies under the table")
    return starts[keep]


# ---------------------------------------------------------------------------
# scoring and selection


def _angle_to_axis(direction: np.ndarray, main_axis: np.ndarray) -> float:
    c = abs(float(direction @ main_axis))
    return math.acos(min(1.0, c))


def score_path(start, grasp_point, cloud: PointCloud, main_axis, epsilon: float = 0.01):
    """Score one approach path; returns (score, angle_to_axis)."""
    start = np.asarray(start, dtype=float).reshape(3)
    gp = np.asarray(grasp_point, dtype=float).reshape(3)
    main_axis = np.asarray(main_axis, dtype=float).reshape(3)
    d = points_segment_distances(cloud.points, start, gp)
    clearance = np.minimum(1.0, 1.0 / (d * d + epsilon)).sum()
    direction = (gp - start) / np.linalg.norm(gp - start)
    a = _angle_to_axis(direction, main_axis)
    return float(2.0 * (math.pi - a) / math.pi * clearance), a


def score_candidates(starts: np.ndarray, grasp_point, cloud: PointCloud, main_axis, epsilon: float = 0.01):
    """Vectorized score_path over many starts; returns (scores, angles)."""
    gp = np.asarray(grasp_point, dtype=float).reshape(3)
    scores = np.empty(len(starts))
    angles = np.empty(len(starts))
    for i, s in enumerate(starts):
        scores[i], angles[i] = score_path(s, gp, cloud, main_axis, epsilon)
    return scores, angles


def _selection_key(path: ApproachPath):
    return (path.score, path.angle_to_axis, tuple(path.start))


def select_best(cluster_paths: dict) -> list:
    """Per cluster keep the minimum-score path, then rank winners ascending.

    Ties break toward smaller angle, then lexicographic start coordinates.
    Returns [(cluster_id, ApproachPath), ...] in rank order.
    """
    winners = []
    for cid, paths in cluster_paths.items():
        if not paths:
            continue
        winners.append((cid, min(paths, key=_selection_key)))
    if not winners:
        raise NoFeasibleApproach("no cluster has a feasible approach path")
    winners.sort(key=lambda item: _selection_key(item[1]))
    return winners


# ---------------------------------------------------------------------------
# pose synthesis

PARALLEL_FALLBACK_DEG = 2.0
ROLL_STEP_DEG = 10.0
ROLL_MAX_DEG = 90.0


def _closing_axis(approach: np.ndarray, main_axis: np.ndarray):
    """Closing axis perpendicular to the approach, preferring approach x axis.

    Falls back to an arbitrary perpendicular when the approach is within
    ~2 degrees of the main axis; the flag reports which branch ran.
    """
    cross = np.cross(approach, main_axis)
    norm = float(np.linalg.norm(cross))
    if norm >= math.sin(math.radians(PARALLEL_FALLBACK_DEG)):
        return fix_axis_sign(cross / norm), False
    # any perpendicular: Gram-Schmidt against the least-aligned world axis
    pick = int(np.argmin(np.abs(approach)))
    seed = np.zeros(3)
    seed[pick] = 1.0
    perp = seed - (seed @ approach) * approach
    return fix_axis_sign(perp / np.linalg.norm(perp)), True


def _gripper_box_corners(grasp_point, approach, closing, transverse, gripper: GripperModel):
    """Corners of the open gripper's swept box over the final approach leg."""
    u = np.array([-1.5 * gripper.finger_length, 0.5 * gripper.finger_length])
    v = gripper.max_aperture / 2.0 + gripper.finger_width
    w = gripper.finger_width / 2.0
    corners = []
    for uu in u:
        for vv in (-v, v):
            for ww in (-w, w):
                corners.append(grasp_point + uu * approach + vv * closing + ww * transverse)
    return np.array(corners)


def synthesize_pose(
    path: ApproachPath,
    main_axis,
    gripper: GripperModel,
    table: TablePlane | None = None,
    cluster_id: int = 0,
) -> GraspConfiguration:
    """6-DoF end-effector pose for a chosen approach path.

    Body frame: z = approach direction, y = closing axis
    (normalize(approach x main_axis), sign canonicalized), x = y cross z.
    The position is the grasp point pulled back along the approach by
    palm_depth. If the swept gripper box would cut the table, the gripper
    is rolled about the approach axis in 10-degree steps (smallest |delta|
    first) up to +-90 degrees; failing that raises TableCollision.
    """
    approach = path.direction
    main_axis = np.asarray(main_axis, dtype=float).reshape(3)
    closing, degenerate = _closing_axis(approach, main_axis)

    chosen = None
    applied = 0.0
    if table is None:
        chosen = closing
    else:
        deltas = [0.0]
        step = math.radians(ROLL_STEP_DEG)
        for k in range(1, int(ROLL_MAX_DEG / ROLL_STEP_DEG) + 1):
            deltas += [k * step, -k * step]
        for delta in deltas:
            rot = rotation_about_axis(approach, delta)
            cand = rot @ closing
            transverse = np.cross(cand, approach)
            corners = _gripper_box_corners(
                path.grasp_point, approach, cand, transverse, gripper
            )
            if (table.signed_distance(corners) >= -1e-9).all():
                chosen = cand
                applied = delta
                break
        if chosen is None:
            raise TableCollision(
                "no roll within +-90 degrees clears the gripper from the table"
            )

    x_axis = np.cross(chosen, approach)
    rotation = np.column_stack([x_axis, chosen, approach])
    roll, pitch, yaw = euler_zyx_from_matrix(rotation)
    position = path.grasp_point - approach * gripper.palm_depth
    pose = (
        float(position[0]),
        float(position[1]),
        float(position[2]),
        roll,
        pitch,
        yaw,
    )
    return GraspConfiguration(
        pose=pose,
        approach=path,
        cluster_id=cluster_id,
        roll_adjustment=applied,
        degenerate_axis=degenerate,
    )


# ---------------------------------------------------------------------------
# full pipeline


def plan(
    cloud: PointCloud,
    table: TablePlane,
    gripper: GripperModel,
    config: PlannerConfig | None = None,
    labels=None,
    orientation=None,
) -> GraspPlan:
    """Labeled cloud -> ranked grasp configurations.

    Labels come from `labels` if given, else from the cloud itself. The
    main axis is the PCA axis of the affordance points only. Deterministic
    per config seed. Raises NoAffordance / NoFeasibleApproach /
    TableCollision when no cluster survives.
    """
    config = config or PlannerConfig()
    if labels is None:
        if cloud.labels is None:
            raise NoAffordance("cloud has no labels and none were supplied")
        labeled = cloud
    else:
        labeled = PointCloud(cloud.points, labels)
    aff = labeled.affordance_points()
    if len(aff) == 0:
        raise NoAffordance("no point is labeled as affordance")

    main_axis = pca_main_axis(aff)
    m = choose_cluster_count(aff, gripper, config.max_clusters)
    m = min(m, len(aff))
    centroids, _ = kmeans(aff, m, config.kmeans_iters, config.seed)

    cluster_paths: dict = {}
    diagnostics = []
    pose_failure = None
    for cid in range(m):
        starts = generate_candidates(centroids[cid], labeled, config, orientation)
        n_before = len(starts)
        try:
            starts = filter_table(starts, table)
        except NoFeasibleApproach:
            diagnostics.append(
                {"cluster_id": cid, "candidates": n_before, "after_table_filter": 0}
            )
            continue
        diagnostics.append(
            {"cluster_id": cid, "candidates": n_before, "after_table_filter": len(starts)}
        )
        scores, angles = score_candidates(
            starts, centroids[cid], labeled, main_axis, config.epsilon
        )
        cluster_paths[cid] = [
            ApproachPath(s, centroids[cid], float(sc), float(a))
            for s, sc, a in zip(starts, scores, angles)
        ]

    winners = select_best(cluster_paths)
    configurations = []
    for cid, path in winners:
        try:
            configurations.append(
                synthesize_pose(path, main_axis, gripper, table, cluster_id=cid)
            )
        except TableCollision as err:
            pose_failure = err
    if not configurations:
        raise pose_failure or NoFeasibleApproach("no cluster produced a pose")
    return GraspPlan(tuple(configurations), tuple(diagnostics))
