"""Geometric primitives: point clouds, voxel grids, transforms, and the
small algorithms the grasp pipeline is built from (PCA main axis,
Fibonacci-sphere sampling, point-to-segment distances).

All types are immutable values; every function is pure.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInput,
    DegenerateSegment,
    EmptyInput,
    FrameMismatch,
    OutOfBounds,
)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class EigenvalueTieWarning(UserWarning):
    """Covariance eigenvalues tied; the returned main axis is one of several."""


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional per-point binary affordance labels.

    The wrapped arrays are treated as immutable by convention; operations
    always return new clouds.
    """

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.uint8).ravel()
            if lab.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"{lab.shape[0]} labels for {pts.shape[0]} points"
                )
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def affordance_points(self) -> np.ndarray:
        """Points whose label is 1. Requires labels."""
        if self.labels is None:
            raise ValueError("cloud has no labels")
        return self.points[self.labels == 1]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.labels)


@dataclass(frozen=True)
class NormalizationTransform:
    """Uniform scale followed by translation: q = p * scale + translation."""

    translation: np.ndarray
    scale: float

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def apply(self, points) -> np.ndarray:
        return _as_points(points) * self.scale + self.translation

    def invert(self, points) -> np.ndarray:
        return (_as_points(points) - self.translation) / self.scale


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: q = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal within 1e-9")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation must be proper (det = +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return _as_points(points) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


@dataclass(frozen=True)
class TablePlane:
    """Plane n·x = offset with unit normal pointing away from the table."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("table normal must be nonzero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points) -> np.ndarray:
        return _as_points(points) @ self.normal - self.offset


@dataclass(frozen=True)
class VoxelGrid:
    """Dense cubic scalar grid with values in [0, 1].

    `frame` is the NormalizationTransform that carried object coordinates
    into voxel coordinates, so index i covers [i, i+1) along each axis.
    """

    values: np.ndarray
    frame: NormalizationTransform | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or len(set(v.shape)) != 1:
            raise ValueError(f"grid must be cubic, got shape {v.shape}")
        if v.size and (float(v.min()) < 0.0 or float(v.max()) > 1.0):
            raise ValueError("grid values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def occupied_count(self, threshold: float = 0.5) -> int:
        return int((self.values >= threshold).sum())


def normalize_cloud(cloud: PointCloud, resolution: int = 32):
    """Center a cloud in the voxel cube [0, resolution)^3.

    Uniform scaling preserves aspect ratio; the longest bounding-box axis
    maps to resolution * (1 - 2/resolution) so surface points keep one
    voxel of padding from each face. A degenerate (single-location) cloud
    keeps scale 1 and is centered.

    Returns the normalized cloud and the invertible transform.
    """
    if len(cloud) == 0:
        raise EmptyInput("cannot normalize an empty cloud")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extent = float((hi - lo).max())
    if extent > 0.0:
        scale = resolution * (1.0 - 2.0 / resolution) / extent
    else:
        scale = 1.0
    center = (lo + hi) / 2.0
    translation = np.full(3, resolution / 2.0) - center * scale
    transform = NormalizationTransform(translation, scale)
    return cloud.with_points(transform.apply(cloud.points)), transform


def voxelize(cloud: PointCloud, resolution: int = 32) -> VoxelGrid:
    """Bin a normalized cloud into a binary occupancy grid.

    A voxel is 1 iff at least one point lands in it (floor of coordinates).
    Points outside [0, resolution) raise OutOfBounds with the index of the
    first offending point.
    """
    idx = np.floor(cloud.points).astype(np.int64)
    bad = ((idx < 0) | (idx >= resolution)).any(axis=1)
    if bad.any():
        which = int(np.flatnonzero(bad)[0])
        raise OutOfBounds(
            f"point {which} at {cloud.points[which]} outside [0, {resolution})"
        )
    values = np.zeros((resolution,) * 3, dtype=np.float32)
    values[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    return VoxelGrid(values)


def voxel_mask_to_point_labels(
    cloud: PointCloud, grid: VoxelGrid, threshold: float = 0.5
) -> np.ndarray:
    """Per-point binary labels from a voxel-valued mask.

    A point is labeled 1 iff the voxel containing it has value >= threshold.
    The cloud must be normalized into the grid's frame already.
    """
    r = grid.resolution
    idx = np.floor(cloud.points).astype(np.int64)
    bad = ((idx < 0) | (idx >= r)).any(axis=1)
    if bad.any():
        which = int(np.flatnonzero(bad)[0])
        raise FrameMismatch(
            f"point {which} falls outside the {r}^3 grid; "
            "cloud is not normalized into this grid's frame"
        )
    return (grid.values[idx[:, 0], idx[:, 1], idx[:, 2]] >= threshold).astype(
        np.uint8
    )


def pca_main_axis(points, tie_tol: float = 1e-9) -> np.ndarray:
    """Direction of maximum variance, unit norm.

    Covariance uses mean-centered points with 1/n normalization. The sign
    is fixed so the first nonzero component is positive. A top-eigenvalue
    tie within `tie_tol` emits EigenvalueTieWarning and returns one of the
    tied axes.
    """
    pts = _as_points(points)
    if pts.shape[0] < 2 or not (pts != pts[0]).any():
        raise DegenerateInput("need at least 2 distinct points for PCA")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] - eigvals[-2] <= tie_tol:
        warnings.warn(
            "top covariance eigenvalues tied; main axis is not unique",
            EigenvalueTieWarning,
            stacklevel=2,
        )
    axis = eigvecs[:, -1]
    return fix_axis_sign(axis)


def fix_axis_sign(axis: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip an axis so its first component larger than `tol` is positive."""
    axis = np.asarray(axis, dtype=float).reshape(3)
    for c in axis:
        if abs(c) > tol:
            return axis if c > 0 else -axis
    return axis


def fibonacci_sphere(n: int, center=(0.0, 0.0, 0.0), radius: float = 1.0) -> np.ndarray:
    """n near-uniform points on a sphere via the golden-angle lattice.

    Latitudes are z_i = 1 - (2i+1)/n, longitudes advance by the golden
    angle. Deterministic for fixed n.
    """
    if n < 1:
        raise EmptyInput("need at least one sphere point")
    if not radius > 0:
        raise ValueError("radius must be positive")
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * GOLDEN_ANGLE
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return pts * radius + np.asarray(center, dtype=float).reshape(3)


def _canonical_segment(a, b):
    """Order segment endpoints lexicographically.

    The distance is symmetric in (a, b) mathematically; canonicalizing the
    order makes it symmetric bit-for-bit.
    """
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    for x, y in zip(a, b):
        if x < y:
            return a, b
        if x > y:
            return b, a
    return a, b


def points_segment_distances(points, a, b) -> np.ndarray:
    """Euclidean distances from each point to the closed segment [a, b]."""
    a, b = _canonical_segment(a, b)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        raise DegenerateSegment("segment endpoints coincide")
    pts = _as_points(points)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.sqrt(((pts - closest) ** 2).sum(axis=1))


def point_segment_distance(p, a, b) -> float:
    """Euclidean distance from p to the closed segment [a, b]."""
    return float(points_segment_distances(np.asarray(p, dtype=float).reshape(1, 3), a, b)[0])


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rotation matrix about an arbitrary unit axis (Rodrigues)."""
    u = np.asarray(axis, dtype=float).reshape(3)
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValueError("rotation axis must be nonzero")
    u = u / norm
    c, s = math.cos(angle), math.sin(angle)
    ux, uy, uz = u
    cross = np.array([[0.0, -uz, uy], [uz, 0.0, -ux], [-uy, ux, 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(u, u)


def matrix_from_euler_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def euler_zyx_from_matrix(r: np.ndarray) -> tuple[float, float, float]:
    """(roll, pitch, yaw) with R = Rz(yaw) @ Ry(pitch) @ Rx(roll).

    ZYX decompositions come in pairs (yaw, pitch, roll) and
    (yaw+pi, pi-pitch, roll+pi); the branch with the smaller |yaw|+|roll|
    is returned so a straight-down pose reads as pitch = pi rather than
    yaw = roll = pi. At the pitch = +-pi/2 singularity roll is set to 0.
    """
    r = np.asarray(r, dtype=float).reshape(3, 3)
    if abs(r[2, 0]) >= 1.0 - 1e-12:
        pitch = -math.copysign(math.pi / 2.0, r[2, 0])
        # yaw and roll are coupled; fold everything into yaw
        yaw = math.atan2(-r[0, 1], r[1, 1])
        return 0.0, pitch, yaw

    def branch(pitch):
        cp = math.cos(pitch)
        yaw = math.atan2(r[1, 0] / cp, r[0, 0] / cp)
        roll = math.atan2(r[2, 1] / cp, r[2, 2] / cp)
        return roll, pitch, yaw

    pitch_a = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    a = branch(pitch_a)
    b = branch(math.pi - pitch_a if pitch_a >= 0 else -math.pi - pitch_a)
    return a if abs(a[0]) + abs(a[2]) <= abs(b[0]) + abs(b[2]) else b
