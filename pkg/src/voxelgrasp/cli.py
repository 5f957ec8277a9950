"""Command-line front end.

Subcommands: gen-data, train, eval-iou, plan, grasp-bench, sweep,
bench-time, viz. Exit codes: 0 success, 1 domain error, 2 usage error.
Option precedence: flags > config file (key=value lines via --config) >
built-in defaults. Every run writes a run_manifest.json into --out-dir.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import nets
from . import planner as pl
from .errors import ToolkitError
from .geometry import TablePlane, normalize_cloud, voxel_mask_to_point_labels, voxelize
from .ioutil import atomic_write_text, file_sha256


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {v}")
    return v


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated int list") from None


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated float list") from None


def _category_list(text: str) -> list:
    byname = {c.lower(): c for c in ds.CATEGORIES}
    out = []
    for item in text.split(","):
        key = item.strip().lower()
        if key not in byname:
            raise argparse.ArgumentTypeError(f"unknown category {item!r}")
        out.append(byname[key])
    return out


DEFAULTS = {
    "seed": 7,
    "res": 32,
    "stages": 3,
    "convs_per_stage": 3,
    "widths": (16, 32, 64),
    "epochs": 50,
    "batch_size": 16,
    "learning_rate": 1e-3,
    "n_points": 1500,
    "per_category": 10,
    "categories": list(ds.CATEGORIES),
    "trials": 20,
    "jobs": 1,
    "table_z": 0.0,
    "ratios": (0.7, 0.15, 0.15),
    "repetitions": 10,
    "levels": None,
    "labels": "ground-truth",
    "checkpoint": None,
    "arch": "resunet",
    "data": None,
    "cloud": None,
    "plan_out": None,
}

_TYPES = {
    "seed": int,
    "res": _positive_int,
    "stages": _positive_int,
    "convs_per_stage": _positive_int,
    "widths": _int_list,
    "epochs": _positive_int,
    "batch_size": _positive_int,
    "learning_rate": _nonneg_float,
    "n_points": _positive_int,
    "per_category": _positive_int,
    "categories": _category_list,
    "trials": _positive_int,
    "jobs": _positive_int,
    "table_z": _float,
    "ratios": _float_list,
    "repetitions": _positive_int,
    "levels": _float_list,
}


def _read_config_file(path) -> dict:
    values = {}
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ToolkitError(f"config line {no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in DEFAULTS:
            raise ToolkitError(f"config line {no}: unknown key {key!r}")
        parse = _TYPES.get(key, str)
        try:
            values[key] = parse(value.strip())
        except argparse.ArgumentTypeError as err:
            raise ToolkitError(f"config line {no}: {err}") from None
    return values


class _Options:
    """Flags > config file > defaults > argparse namespace."""

    def __init__(self, args: argparse.Namespace):
        self._args = vars(args)
        self._flag = {k: v for k, v in self._args.items() if v is not None}
        self._config = (
            _read_config_file(args.config) if getattr(args, "config", None) else {}
        )

    def given(self, key) -> bool:
        return key in self._flag or key in self._config

    def __getattr__(self, key):
        for source in (self._flag, self._config, DEFAULTS, self._args):
            if key in source:
                return source[key]
        raise AttributeError(key)

    def manifest_values(self, keys) -> dict:
        return {k: getattr(self, k) for k in keys}


def _write_run_manifest(out_dir: Path, command: str, values: dict, inputs, started):
    finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    hashes = {str(p): file_sha256(p) for p in inputs if p and Path(p).is_file()}
    payload = {
        "command": command,
        "config": {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in values.items()
        },
        "inputs": hashes,
        "started": started,
        "finished": finished,
    }
    atomic_write_text(out_dir / "run_manifest.json", json.dumps(payload, indent=2, sort_keys=True))


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxelgrasp",
        description="Grasp affordance detection and 6-DoF grasp planning toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--out-dir", required=out_required, help="directory for outputs and the run manifest")
        p.add_argument("--config", help="key=value config file (flags win)")
        p.add_argument("--seed", type=int, help="RNG seed (default 7)")

    p = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    common(p)
    p.add_argument("--categories", type=_category_list, help="comma list, e.g. mug,knife")
    p.add_argument("--per-category", type=_positive_int, help="objects per category")
    p.add_argument("--n-points", type=_positive_int, help="points per object")

    p = sub.add_parser("train", help="train one architecture on a dataset")
    common(p)
    p.add_argument("--data", help="dataset manifest from gen-data", required=True)
    p.add_argument("--arch", choices=["encdec", "unet", "resunet"])
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--widths", type=_int_list, help="stage widths, e.g. 16,32,64")
    p.add_argument("--stages", type=_positive_int)
    p.add_argument("--convs-per-stage", type=_positive_int)
    p.add_argument("--res", type=_positive_int, help="voxel resolution")
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--learning-rate", type=_nonneg_float)
    p.add_argument("--ratios", type=_float_list, help="train,val,test ratios")

    p = sub.add_parser("eval-iou", help="per-category point IoU of a checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratios", type=_float_list)

    p = sub.add_parser("plan", help="plan grasps for one cloud")
    common(p)
    p.add_argument("--cloud", required=True, help="PLY or XYZ file")
    p.add_argument("--table-z", type=_float, help="table plane height (normal +z)")
    p.add_argument("--labels", choices=["ground-truth", "network"])
    p.add_argument("--checkpoint", help="needed with --labels network")

    p = sub.add_parser("grasp-bench", help="tabletop success-rate experiment")
    common(p)
    p.add_argument("--mode", choices=["ground-truth", "network"], default="ground-truth")
    p.add_argument("--checkpoint")
    p.add_argument("--trials", type=_positive_int, help="trials per category")
    p.add_argument("--categories", type=_category_list)
    p.add_argument("--n-points", type=_positive_int)
    p.add_argument("--jobs", type=_positive_int)

    p = sub.add_parser("sweep", help="robustness sweep over density or noise")
    common(p)
    p.add_argument("axis", choices=["density", "noise"])
    p.add_argument("--levels", type=_float_list)
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--categories", type=_category_list)
    p.add_argument("--n-points", type=_positive_int)
    p.add_argument("--jobs", type=_positive_int)

    p = sub.add_parser("bench-time", help="per-stage wall-time benchmark")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint to time (default: fresh default net)")
    p.add_argument("--n-points", type=_positive_int)
    p.add_argument("--repetitions", type=_positive_int)

    p = sub.add_parser("viz", help="export a colored PLY (object, affordance, paths)")
    common(p)
    p.add_argument("--cloud", required=True)
    p.add_argument("--table-z", type=_float)
    p.add_argument("--labels", choices=["ground-truth", "network"])
    p.add_argument("--checkpoint")
    p.add_argument("--with-plan", action="store_true", default=None, help="include winning paths as edges")
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_gen_data(opt) -> int:
    out = Path(opt.out_dir)
    samples = [
        ds.generate_synthetic(cat, int(np.random.default_rng([opt.seed, i, k]).integers(2**31)), opt.n_points)
        for k, cat in enumerate(opt.categories)
        for i in range(opt.per_category)
    ]
    # regenerate with readable, collision-free ids
    renamed = []
    counter = {}
    for s in samples:
        n = counter.get(s.category, 0)
        counter[s.category] = n + 1
        renamed.append(ds.LabeledSample(f"{s.category.lower()}_{n:03d}", s.category, s.cloud))
    ds.write_manifest(out / "manifest.tsv", renamed, ply_dir=out / "clouds")
    print(f"wrote {len(renamed)} samples under {out}")
    return 0


def _resolve_spec(opt) -> nets.NetworkSpec:
    widths = tuple(opt.widths)
    stages = opt.stages if opt.given("stages") else len(widths)
    return nets.NetworkSpec(
        kind=opt.arch,
        stages=stages,
        convs_per_stage=opt.convs_per_stage,
        stage_widths=widths,
        input_resolution=opt.res,
    )


def _cmd_train(opt) -> int:
    out = Path(opt.out_dir)
    samples = ds.load_manifest(opt.data)
    split = ds.split_dataset(samples, ratios=opt.ratios, seed=opt.seed)
    spec = _resolve_spec(opt)
    config = nets.TrainConfig(
        learning_rate=opt.learning_rate,
        batch_size=opt.batch_size,
        max_epochs=opt.epochs,
        seed=opt.seed,
    )
    params, history = nets.train(spec, split, config)
    nets.save_checkpoint(params, out / "checkpoint.runc")
    atomic_write_text(out / "history.tsv", history.to_tsv())
    print(
        f"trained {spec.kind} for {len(history)} epochs; "
        f"best val IoU {max(history.val_iou):.4f}; wrote {out / 'checkpoint.runc'}"
    )
    return 0


def _point_iou_for_sample(params, sample) -> float:
    r = params.spec.input_resolution
    normalized, _ = normalize_cloud(sample.cloud, r)
    grid = voxelize(normalized, r)
    probs, _ = nets.forward(params, grid.values[None, None], mode="infer")
    from .geometry import VoxelGrid

    prob_grid = VoxelGrid(np.asarray(probs[0, 0], dtype=np.float64).clip(0.0, 1.0))
    pred = voxel_mask_to_point_labels(normalized, prob_grid, threshold=0.5)
    return ev.iou(pred, sample.cloud.labels)


def _cmd_eval_iou(opt) -> int:
    out = Path(opt.out_dir)
    samples = ds.load_manifest(opt.data)
    split = ds.split_dataset(samples, ratios=opt.ratios, seed=opt.seed)
    params = nets.load_checkpoint(opt.checkpoint)
    per_cat = {}
    for sample in split.test:
        per_cat.setdefault(sample.category, []).append(
            _point_iou_for_sample(params, sample)
        )
    means, overall = ev.category_miou(per_cat)
    rows = ["Category\tIoU"]
    rows += [f"{cat}\t{v:.4f}" for cat, v in sorted(means.items())]
    rows.append(f"Overall\t{overall:.4f}")
    text = "\n".join(rows) + "\n"
    atomic_write_text(out / "iou.tsv", text)
    print(text, end="")
    return 0


def _load_labeled_cloud(opt):
    cloud = ds.load_point_cloud(opt.cloud)
    if opt.labels == "network":
        if not opt.checkpoint:
            raise ToolkitError("--labels network requires --checkpoint")
        params = nets.load_checkpoint(opt.checkpoint)
        r = params.spec.input_resolution
        normalized, _ = normalize_cloud(cloud, r)
        grid = voxelize(normalized, r)
        probs, _ = nets.forward(params, grid.values[None, None], mode="infer")
        from .geometry import VoxelGrid

        prob_grid = VoxelGrid(np.asarray(probs[0, 0], dtype=np.float64).clip(0.0, 1.0))
        labels = voxel_mask_to_point_labels(normalized, prob_grid, threshold=0.5)
    else:
        if cloud.labels is None:
            raise ToolkitError(f"{opt.cloud} carries no labels; use --labels network")
        labels = cloud.labels
    return cloud, labels


def _cmd_plan(opt) -> int:
    out = Path(opt.out_dir)
    cloud, labels = _load_labeled_cloud(opt)
    table = TablePlane(np.array([0.0, 0.0, 1.0]), opt.table_z)
    grasp_plan = pl.plan(
        cloud,
        table,
        pl.GripperModel(),
        pl.PlannerConfig(seed=opt.seed),
        labels=labels,
    )
    text = pl.format_plan(grasp_plan)
    atomic_write_text(out / "plan.tsv", text)
    print(text, end="")
    return 0


def _cmd_grasp_bench(opt) -> int:
    out = Path(opt.out_dir)
    params = None
    mode = "ground_truth_labels"
    if opt.mode == "network":
        if not opt.checkpoint:
            raise ToolkitError("--mode network requires --checkpoint")
        params = nets.load_checkpoint(opt.checkpoint)
        mode = "network"
    report = ev.run_success_experiment(
        opt.categories,
        opt.trials,
        opt.seed,
        mode=mode,
        params=params,
        n_points=opt.n_points,
        jobs=opt.jobs,
    )
    text = report.to_text()
    atomic_write_text(out / "success.tsv", text)
    print(text, end="")
    return 0


def _cmd_sweep(opt) -> int:
    out = Path(opt.out_dir)
    if opt.axis == "density":
        axis = "keep_probability"
        levels = opt.levels or (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)
    else:
        axis = "noise_sigma"
        levels = opt.levels or (0.0, 0.005, 0.01, 0.02, 0.03)
    report = ev.run_robustness_sweep(
        axis,
        levels,
        opt.trials,
        opt.seed,
        categories=tuple(opt.categories),
        n_points=opt.n_points,
        jobs=opt.jobs,
    )
    text = ev.format_sweep(report)
    atomic_write_text(out / "sweep.tsv", text)
    print(text, end="")
    return 0


def _cmd_bench_time(opt) -> int:
    out = Path(opt.out_dir)
    if opt.checkpoint:
        params = nets.load_checkpoint(opt.checkpoint)
    else:
        params = nets.build_network(nets.NetworkSpec(kind="resunet"), seed=opt.seed)
    sample = ds.generate_synthetic("Mug", opt.seed, opt.n_points)
    report = ev.benchmark_timing(sample, params, repetitions=opt.repetitions)
    text = report.to_text()
    atomic_write_text(out / "timing.tsv", text)
    print(text, end="")
    return 0


OBJECT_RGB = (25, 25, 112)
AFFORDANCE_RGB = (255, 140, 0)
PATH_RGB = (220, 20, 20)


def _cmd_viz(opt) -> int:
    out = Path(opt.out_dir)
    cloud, labels = _load_labeled_cloud(opt)
    edges = []
    extra_vertices = []
    if opt.with_plan:
        table = TablePlane(np.array([0.0, 0.0, 1.0]), opt.table_z)
        grasp_plan = pl.plan(
            cloud, table, pl.GripperModel(), pl.PlannerConfig(seed=opt.seed), labels=labels
        )
        base = len(cloud)
        for cfg in grasp_plan.configurations:
            extra_vertices.append(cfg.approach.start)
            extra_vertices.append(cfg.approach.grasp_point)
            edges.append((base + len(extra_vertices) - 2, base + len(extra_vertices) - 1))
    rows = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud) + len(extra_vertices)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element edge {len(edges)}",
        "property int vertex1",
        "property int vertex2",
        "end_header",
    ]
    for p, lab in zip(cloud.points, labels):
        rgb = AFFORDANCE_RGB if lab else OBJECT_RGB
        rows.append(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {rgb[0]} {rgb[1]} {rgb[2]}")
    for p in extra_vertices:
        rows.append(
            f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {PATH_RGB[0]} {PATH_RGB[1]} {PATH_RGB[2]}"
        )
    rows += [f"{a} {b}" for a, b in edges]
    atomic_write_text(out / "viz.ply", "\n".join(rows) + "\n")
    print(f"wrote {out / 'viz.ply'}")
    return 0


_COMMANDS = {
    "gen-data": (_cmd_gen_data, ["seed", "categories", "per_category", "n_points"]),
    "train": (
        _cmd_train,
        ["seed", "arch", "epochs", "widths", "convs_per_stage", "res", "batch_size", "learning_rate", "ratios", "data"],
    ),
    "eval-iou": (_cmd_eval_iou, ["seed", "ratios", "data", "checkpoint"]),
    "plan": (_cmd_plan, ["seed", "cloud", "table_z", "labels", "checkpoint"]),
    "grasp-bench": (_cmd_grasp_bench, ["seed", "trials", "categories", "n_points", "jobs"]),
    "sweep": (_cmd_sweep, ["seed", "trials", "categories", "n_points", "jobs", "levels"]),
    "bench-time": (_cmd_bench_time, ["seed", "n_points", "repetitions", "checkpoint"]),
    "viz": (_cmd_viz, ["seed", "cloud", "table_z", "labels", "checkpoint"]),
}


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    started = _utcnow()
    handler, manifest_keys = _COMMANDS[args.command]
    try:
        opt = _Options(args)
        code = handler(opt)
        out_dir = Path(opt.out_dir)
        inputs = [getattr(opt, k, None) for k in ("data", "cloud", "checkpoint", "config")]
        _write_run_manifest(
            out_dir, args.command, opt.manifest_values(manifest_keys), inputs, started
        )
        return code
    except ToolkitError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
