"""Sample ingestion, augmentation, perturbation, and a procedural
synthetic-shape generator with ground-truth affordance labels.

File formats: ASCII PLY (float x/y/z plus an optional uchar "affordance"
property) and plain whitespace XYZ with an optional trailing 0/1 label
column. Dataset manifests are tab-separated `id<TAB>category<TAB>path`
lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyInput,
    EmptyResult,
    InsufficientData,
    ParseError,
    UnknownCategory,
)
from .geometry import PointCloud, normalize_cloud, voxelize, VoxelGrid
from .ioutil import atomic_write_text

CATEGORIES = ("Mug", "Chair", "Knife", "Guitar", "Lamp")

# separator between a base object id and its augmentation tag
AUG_SEP = "~"

_AUG_TAGS = ("orig", "rot090", "rot180", "rot270", "flipx", "flipy")


@dataclass(frozen=True)
class LabeledSample:
    """One object with per-point affordance labels."""

    id: str
    category: str
    cloud: PointCloud

    def __post_init__(self):
        if self.cloud.labels is None:
            raise ValueError(f"sample {self.id!r} has no labels")
        lab = self.cloud.labels
        if not (lab == 1).any() or not (lab == 0).any():
            raise ValueError(
                f"sample {self.id!r} must contain both labeled and unlabeled points"
            )

    @property
    def base_id(self) -> str:
        return self.id.split(AUG_SEP, 1)[0]


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    validation: list
    test: list

    def __post_init__(self):
        ids = [
            {s.base_id for s in part}
            for part in (self.train, self.validation, self.test)
        ]
        if ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2]:
            raise ValueError("split base ids are not disjoint")


@dataclass(frozen=True)
class PerturbationConfig:
    keep_probability: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.keep_probability <= 1.0:
            raise ValueError("keep_probability must be in (0, 1]")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")

    def apply(self, cloud: PointCloud) -> PointCloud:
        out = downsample(cloud, self.keep_probability, self.seed)
        return add_gaussian_noise(out, self.noise_sigma, self.seed + 1)


# ---------------------------------------------------------------------------
# file I/O


def load_point_cloud(path) -> PointCloud:
    """Parse an ASCII PLY or XYZ[L] file into a cloud."""
    text = Path(path).read_text()
    lines = text.splitlines()
    first = next((ln for ln in lines if ln.strip()), "")
    if first.strip().lower() == "ply":
        return _parse_ply(lines)
    return _parse_xyz(lines)


def _parse_xyz(lines) -> PointCloud:
    points, labels = [], []
    expect_label = None
    for no, raw in enumerate(lines, start=1):
        row = raw.split()
        if not row:
            continue
        if len(row) not in (3, 4):
            raise ParseError(f"expected 3 or 4 columns, got {len(row)}", line=no)
        if expect_label is None:
            expect_label = len(row) == 4
        elif (len(row) == 4) != expect_label:
            raise ParseError("inconsistent column count", line=no)
        try:
            points.append([float(v) for v in row[:3]])
            if expect_label:
                labels.append(int(row[3]))
        except ValueError:
            raise ParseError(f"non-numeric value in {row!r}", line=no) from None
    if not points:
        raise EmptyInput("file contains no points")
    return PointCloud(np.array(points), np.array(labels) if expect_label else None)


def _parse_ply(lines) -> PointCloud:
    # header
    elements = []  # (name, count, [(prop_type, prop_name), ...])
    it = enumerate(lines, start=1)
    header_end = None
    for no, raw in it:
        word = raw.strip()
        if word == "ply" or word.startswith("comment") or not word:
            continue
        if word.startswith("format"):
            if word.split()[1] != "ascii":
                raise ParseError("only ascii PLY is supported", line=no)
            continue
        if word.startswith("element"):
            parts = word.split()
            try:
                elements.append((parts[1], int(parts[2]), []))
            except (IndexError, ValueError):
                raise ParseError(f"bad element declaration {word!r}", line=no) from None
            continue
        if word.startswith("property"):
            parts = word.split()
            if not elements:
                raise ParseError("property before any element", line=no)
            if parts[1] == "list":
                elements[-1][2].append((" ".join(parts[1:-1]), parts[-1]))
            else:
                elements[-1][2].append((parts[1], parts[2]))
            continue
        if word == "end_header":
            header_end = no
            break
        raise ParseError(f"unexpected header line {word!r}", line=no)
    if header_end is None:
        raise ParseError("missing end_header", line=len(lines))

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ParseError("no vertex element", line=header_end)
    prop_names = [p[1] for p in vertex[2]]
    try:
        cols = [prop_names.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise ParseError("vertex element lacks x/y/z", line=header_end) from None
    label_col = prop_names.index("affordance") if "affordance" in prop_names else None

    no = header_end
    data_lines = lines[header_end:]
    cursor = 0

    def next_row(width, what):
        nonlocal cursor, no
        while cursor < len(data_lines):
            no += 1
            row = data_lines[cursor].split()
            cursor += 1
            if row:
                if len(row) < width:
                    raise ParseError(
                        f"{what} row has {len(row)} fields, needs {width}", line=no
                    )
                return row
        raise ParseError(f"file truncated while reading {what}", line=no + 1)

    points = np.empty((vertex[1], 3))
    labels = np.empty(vertex[1], dtype=np.uint8) if label_col is not None else None
    width = len(prop_names)
    for e_name, e_count, e_props in elements:
        if e_name == "vertex":
            for i in range(e_count):
                row = next_row(width, "vertex")
                try:
                    points[i] = [float(row[c]) for c in cols]
                    if labels is not None:
                        labels[i] = int(row[label_col])
                except ValueError:
                    raise ParseError(f"non-numeric vertex row {row!r}", line=no) from None
        else:
            for _ in range(e_count):
                next_row(1, e_name)
    if vertex[1] == 0:
        raise EmptyInput("PLY declares zero vertices")
    return PointCloud(points, labels)


def format_ply(cloud: PointCloud, comment: str | None = None) -> str:
    """ASCII PLY text for a cloud; labels become the affordance property."""
    out = ["ply", "format ascii 1.0"]
    if comment:
        out.append(f"comment {comment}")
    out += [
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.labels is not None:
        out.append("property uchar affordance")
    out.append("end_header")
    for i, p in enumerate(cloud.points):
        row = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
        if cloud.labels is not None:
            row += f" {int(cloud.labels[i])}"
        out.append(row)
    return "\n".join(out) + "\n"


def save_point_cloud(path, cloud: PointCloud, comment: str | None = None) -> None:
    atomic_write_text(path, format_ply(cloud, comment))


def write_manifest(path, samples, ply_dir=None) -> list[Path]:
    """Write samples as PLY files plus an `id<TAB>category<TAB>path` manifest.

    Returns the written PLY paths. Paths in the manifest are relative to
    the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    ply_dir = Path(ply_dir) if ply_dir else base
    written = []
    rows = []
    for s in samples:
        fname = s.id.replace(AUG_SEP, "_") + ".ply"
        target = ply_dir / fname
        save_point_cloud(target, s.cloud, comment=f"category {s.category}")
        written.append(target)
        rows.append(f"{s.id}\t{s.category}\t{target.relative_to(base)}")
    atomic_write_text(path, "\n".join(rows) + "\n")
    return written


def load_manifest(path) -> list[LabeledSample]:
    path = Path(path)
    samples = []
    for no, raw in enumerate(path.read_text().splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise ParseError(f"manifest row needs 3 tab-separated fields", line=no)
        sid, category, rel = parts
        cloud = load_point_cloud(path.parent / rel)
        if cloud.labels is None:
            raise ParseError(f"cloud for {sid!r} carries no labels", line=no)
        samples.append(LabeledSample(sid, category, cloud))
    if not samples:
        raise EmptyInput(f"manifest {path} lists no samples")
    return samples


# ---------------------------------------------------------------------------
# augmentation and perturbation


def augment(sample: LabeledSample) -> list[LabeledSample]:
    """Six isometric variants: identity, z-rotations by 90/180/270 degrees,
    and mirrors across the yz and xz planes. Labels ride along unchanged."""
    x, y, z = sample.cloud.points.T
    variants = {
        "orig": np.stack([x, y, z], axis=1),
        "rot090": np.stack([-y, x, z], axis=1),
        "rot180": np.stack([-x, -y, z], axis=1),
        "rot270": np.stack([y, -x, z], axis=1),
        "flipx": np.stack([-x, y, z], axis=1),
        "flipy": np.stack([x, -y, z], axis=1),
    }
    return [
        LabeledSample(
            f"{sample.id}{AUG_SEP}{tag}",
            sample.category,
            PointCloud(pts, sample.cloud.labels),
        )
        for tag, pts in variants.items()
    ]


def downsample(cloud: PointCloud, keep_probability: float, seed: int) -> PointCloud:
    """Keep each point independently with the given probability (seeded)."""
    if not 0.0 < keep_probability <= 1.0:
        raise ValueError("keep_probability must be in (0, 1]")
    rng = np.random.default_rng(seed)
    mask = rng.random(len(cloud)) < keep_probability
    if not mask.any():
        raise EmptyResult("downsampling removed every point")
    labels = cloud.labels[mask] if cloud.labels is not None else None
    return PointCloud(cloud.points[mask], labels)


def add_gaussian_noise(cloud: PointCloud, sigma: float, seed: int) -> PointCloud:
    """Perturb each coordinate with independent zero-mean Gaussian noise."""
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=cloud.points.shape) if sigma > 0 else 0.0
    return PointCloud(cloud.points + noise, cloud.labels)


# ---------------------------------------------------------------------------
# synthetic shapes

_CATEGORY_INDEX = {c: i for i, c in enumerate(CATEGORIES)}


def _dim(rng, nominal: float) -> float:
    return nominal * rng.uniform(0.75, 1.25)


def _sample_cylinder_side(rng, n, radius, z0, z1, center=(0.0, 0.0)):
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    z = rng.uniform(z0, z1, n)
    return np.stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta), z],
        axis=1,
    )


def _sample_disk(rng, n, radius, z, center=(0.0, 0.0)):
    r = radius * np.sqrt(rng.random(n))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.stack(
        [center[0] + r * np.cos(theta), center[1] + r * np.sin(theta), np.full(n, z)],
        axis=1,
    )


def _sample_box(rng, n, size, center):
    """Uniform points on the surface of an axis-aligned box."""
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, n)
    v = rng.uniform(-0.5, 0.5, n)
    pts = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        other = [a for a in range(3) if a != axis]
        pts[m, axis] = sign * 0.5 * size[axis]
        pts[m, other[0]] = u[m] * size[other[0]]
        pts[m, other[1]] = v[m] * size[other[1]]
    return pts + np.asarray(center)


def _sample_torus(rng, n, major, minor, center, plane="xz"):
    """Area-weighted points on a torus; `plane` picks the ring's plane."""
    out = np.empty((n, 3))
    got = 0
    while got < n:
        m = (n - got) * 2 + 8
        theta = rng.uniform(0.0, 2.0 * math.pi, m)
        phi = rng.uniform(0.0, 2.0 * math.pi, m)
        accept = rng.random(m) < (major + minor * np.cos(phi)) / (major + minor)
        theta, phi = theta[accept][: n - got], phi[accept][: n - got]
        ring = major + minor * np.cos(phi)
        if plane == "xz":
            chunk = np.stack([ring * np.cos(theta), minor * np.sin(phi), ring * np.sin(theta)], axis=1)
        else:
            chunk = np.stack([ring * np.cos(theta), ring * np.sin(theta), minor * np.sin(phi)], axis=1)
        out[got : got + len(chunk)] = chunk
        got += len(chunk)
    return out + np.asarray(center)


def _sample_cone_side(rng, n, r_bottom, r_top, z0, z1, center=(0.0, 0.0)):
    # density along z proportional to local radius
    z = np.empty(n)
    got = 0
    rmax = max(r_bottom, r_top)
    while got < n:
        m = (n - got) * 2 + 8
        cand = rng.uniform(z0, z1, m)
        frac = (cand - z0) / (z1 - z0)
        r = r_bottom + (r_top - r_bottom) * frac
        cand = cand[rng.random(m) < r / rmax][: n - got]
        z[got : got + len(cand)] = cand
        got += len(cand)
    frac = (z - z0) / (z1 - z0)
    r = r_bottom + (r_top - r_bottom) * frac
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.stack(
        [center[0] + r * np.cos(theta), center[1] + r * np.sin(theta), z], axis=1
    )


def _allocate(n, weights):
    """Integer point counts proportional to weights, each at least 1."""
    w = np.asarray(weights, dtype=float)
    counts = np.maximum(1, np.floor(n * w / w.sum()).astype(int))
    while counts.sum() > n:
        counts[int(np.argmax(counts))] -= 1
    counts[int(np.argmax(w))] += n - counts.sum()
    return counts


def generate_synthetic(category: str, seed: int, n_points: int = 2000) -> LabeledSample:
    """Procedural object of the given category with its graspable part labeled.

    Mug: cylinder body + torus handle (handle labeled). Knife: flat blade +
    box handle (handle). Chair: seat, legs, back panel + top rail (rail).
    Guitar: two-lobe body + neck (neck). Lamp: base + pole + shade (pole).
    Dimensions are randomized within +-25% per seed; output is deterministic
    per (category, seed, n_points).
    """
    if category not in _CATEGORY_INDEX:
        raise UnknownCategory(f"unknown category {category!r}; choose from {CATEGORIES}")
    if n_points < 500:
        raise ValueError("n_points must be at least 500")
    rng = np.random.default_rng([seed, _CATEGORY_INDEX[category]])
    builder = {
        "Mug": _build_mug,
        "Chair": _build_chair,
        "Knife": _build_knife,
        "Guitar": _build_guitar,
        "Lamp": _build_lamp,
    }[category]
    parts = builder(rng, n_points)
    points = np.concatenate([p for p, _ in parts])
    labels = np.concatenate(
        [np.full(len(p), lab, dtype=np.uint8) for p, lab in parts]
    )
    return LabeledSample(
        f"{category.lower()}_{seed:04d}", category, PointCloud(points, labels)
    )


def _build_mug(rng, n):
    radius = _dim(rng, 0.30)
    height = _dim(rng, 0.72)
    h_major = _dim(rng, 0.16)
    h_minor = _dim(rng, 0.035)
    side_area = 2.0 * math.pi * radius * height
    bottom_area = math.pi * radius**2
    handle_area = 4.0 * math.pi**2 * h_major * h_minor
    n_side, n_bottom, n_handle = _allocate(n, [side_area, bottom_area, handle_area])
    handle_center = (radius + h_major * 0.85, 0.0, height * 0.55)
    return [
        (_sample_cylinder_side(rng, n_side, radius, 0.0, height), 0),
        (_sample_disk(rng, n_bottom, radius, 0.0), 0),
        (_sample_torus(rng, n_handle, h_major, h_minor, handle_center, plane="xz"), 1),
    ]


def _build_knife(rng, n):
    blade_l = _dim(rng, 0.55)
    blade_w = _dim(rng, 0.09)
    blade_t = 0.012
    handle_l = _dim(rng, 0.34)
    handle_w = _dim(rng, 0.05)
    handle_t = _dim(rng, 0.035)
    blade_area = 2 * blade_l * blade_w
    handle_area = 2 * handle_l * (handle_w + handle_t)
    n_blade, n_handle = _allocate(n, [blade_area, handle_area])
    z = handle_t / 2.0  # rest the knife flat
    blade = _sample_box(rng, n_blade, (blade_l, blade_w, blade_t), (blade_l / 2, 0.0, z))
    handle = _sample_box(
        rng, n_handle, (handle_l, handle_w, handle_t), (-handle_l / 2, 0.0, z)
    )
    return [(blade, 0), (handle, 1)]


def _build_chair(rng, n):
    seat = _dim(rng, 0.48)
    seat_t = 0.05
    seat_h = _dim(rng, 0.42)
    leg_w = 0.05
    back_h = _dim(rng, 0.5)
    back_t = 0.05
    rail_h = _dim(rng, 0.11)
    specs = [
        ((seat, seat, seat_t), (0.0, 0.0, seat_h + seat_t / 2), 0),
    ]
    off = seat / 2 - leg_w
    for sx in (-off, off):
        for sy in (-off, off):
            specs.append(((leg_w, leg_w, seat_h), (sx, sy, seat_h / 2), 0))
    panel_h = back_h - rail_h
    y_back = seat / 2 - back_t / 2
    specs.append(
        ((seat, back_t, panel_h), (0.0, y_back, seat_h + seat_t + panel_h / 2), 0)
    )
    specs.append(
        (
            (seat, back_t, rail_h),
            (0.0, y_back, seat_h + seat_t + panel_h + rail_h / 2),
            1,
        )
    )
    areas = [2 * (a * b + b * c + a * c) for (a, b, c), _, _ in specs]
    counts = _allocate(n, areas)
    return [
        (_sample_box(rng, int(c), size, center), lab)
        for c, (size, center, lab) in zip(counts, specs)
    ]


def _build_guitar(rng, n):
    r_big = _dim(rng, 0.27)
    r_small = _dim(rng, 0.20)
    thick = _dim(rng, 0.10)
    neck_l = _dim(rng, 0.5)
    neck_w = _dim(rng, 0.07)
    neck_t = 0.03
    z = thick / 2.0  # lying flat
    big_c = (0.0, 0.0)
    small_c = (r_big + r_small * 0.55, 0.0)
    area_big = 2 * math.pi * r_big**2 + 2 * math.pi * r_big * thick
    area_small = 2 * math.pi * r_small**2 + 2 * math.pi * r_small * thick
    area_neck = 2 * neck_l * (neck_w + neck_t)
    n_big, n_small, n_neck = _allocate(n, [area_big, area_small, area_neck])

    def lobe(m, radius, center):
        n_disk = int(m * (2 * radius) / (2 * radius + thick))
        top = _sample_disk(rng, n_disk // 2, radius, thick, center)
        bot = _sample_disk(rng, n_disk - n_disk // 2, radius, 0.0, center)
        side = _sample_cylinder_side(rng, m - n_disk, radius, 0.0, thick, center)
        return np.concatenate([top, bot, side])

    neck_x = small_c[0] + r_small * 0.8 + neck_l / 2
    neck = _sample_box(rng, n_neck, (neck_l, neck_w, neck_t), (neck_x, 0.0, z))
    return [(lobe(n_big, r_big, big_c), 0), (lobe(n_small, r_small, small_c), 0), (neck, 1)]


def _build_lamp(rng, n):
    base_r = _dim(rng, 0.20)
    base_t = 0.03
    pole_r = _dim(rng, 0.025)
    pole_h = _dim(rng, 0.55)
    shade_r0 = _dim(rng, 0.20)
    shade_r1 = _dim(rng, 0.11)
    shade_h = _dim(rng, 0.18)
    area_base = math.pi * base_r**2 + 2 * math.pi * base_r * base_t
    area_pole = 2 * math.pi * pole_r * pole_h
    slant = math.hypot(shade_r0 - shade_r1, shade_h)
    area_shade = math.pi * (shade_r0 + shade_r1) * slant
    n_base, n_pole, n_shade = _allocate(n, [area_base, area_pole, area_shade])
    base_top = _sample_disk(rng, n_base // 2, base_r, base_t)
    base_side = _sample_cylinder_side(rng, n_base - n_base // 2, base_r, 0.0, base_t)
    pole = _sample_cylinder_side(rng, n_pole, pole_r, base_t, base_t + pole_h)
    z_shade = base_t + pole_h
    shade = _sample_cone_side(rng, n_shade, shade_r0, shade_r1, z_shade, z_shade + shade_h)
    return [
        (np.concatenate([base_top, base_side]), 0),
        (pole, 1),
        (shade, 0),
    ]


# ---------------------------------------------------------------------------
# splitting and voxel bridging


def split_dataset(samples, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> DatasetSplit:
    """Shuffle base objects by seed, partition by ratios, then 6x-augment
    train and validation. Test stays unaugmented."""
    r = np.asarray(ratios, dtype=float)
    if abs(float(r.sum()) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {r.tolist()}")
    n = len(samples)
    if n < 3:
        raise InsufficientData(f"need at least 3 base samples, got {n}")
    n_train = int(round(r[0] * n))
    n_val = int(round(r[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise InsufficientData(
            f"ratios {r.tolist()} leave an empty split for {n} samples"
        )
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [samples[i] for i in order]
    train_base = shuffled[:n_train]
    val_base = shuffled[n_train : n_train + n_val]
    test = shuffled[n_train + n_val :]
    train = [v for s in train_base for v in augment(s)]
    validation = [v for s in val_base for v in augment(s)]
    return DatasetSplit(train, validation, test)


def sample_to_grids(sample: LabeledSample, resolution: int = 32):
    """Voxelize a sample into (occupancy grid, affordance target grid).

    Both grids share the frame of the full cloud's normalization; the
    target marks voxels containing at least one labeled point.
    """
    normalized, transform = normalize_cloud(sample.cloud, resolution)
    occupancy = voxelize(normalized, resolution)
    target = np.zeros_like(occupancy.values)
    aff = normalized.points[normalized.labels == 1]
    idx = np.floor(aff).astype(np.int64)
    target[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    return (
        VoxelGrid(occupancy.values, frame=transform),
        VoxelGrid(target, frame=transform),
    )
