"""The three volumetric segmentation architectures and their exact
reverse-mode gradients.

All share one skeleton: an encoder of `stages` blocks (each a run of
3x3x3 conv + BN + ReLU units followed by 2x2x2 max pooling) mirrored by a
decoder (nearest-neighbor upsample first), closed by a 1x1x1 conv +
sigmoid head producing one probability channel.

ENC_DEC    plain runs, no skips.
UNET       the last encoder map of each stage is concatenated onto the
           upsampled map entering the matching decoder stage.
RES_UNET   UNET with every stage's conv run wrapped into a residual
           block: ReLU is dropped after the run's final BN, a shortcut
           (identity, or 1x1x1 conv + BN when the channel count changes)
           is added, then ReLU.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import CacheMismatch, ShapeError
from ..geometry import VoxelGrid
from . import layers

ENC_DEC = "encdec"
UNET = "unet"
RES_UNET = "resunet"
KINDS = (ENC_DEC, UNET, RES_UNET)


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    stages: int = 3
    convs_per_stage: int = 3
    stage_widths: tuple = (16, 32, 64)
    input_resolution: int = 32

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if len(self.stage_widths) != self.stages:
            raise ValueError("stage_widths length must equal stages")
        if any(w <= 0 for w in self.stage_widths):
            raise ValueError("stage widths must be positive")
        if any(a > b for a, b in zip(self.stage_widths, self.stage_widths[1:])):
            raise ValueError("stage widths must be nondecreasing")
        if self.convs_per_stage < 1:
            raise ValueError("convs_per_stage must be at least 1")
        if self.input_resolution % (2**self.stages) != 0:
            raise ShapeError(
                f"resolution {self.input_resolution} not divisible by 2^{self.stages}"
            )

    @property
    def has_skips(self) -> bool:
        return self.kind in (UNET, RES_UNET)

    @property
    def residual(self) -> bool:
        return self.kind == RES_UNET

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "stages": self.stages,
                "convs_per_stage": self.convs_per_stage,
                "stage_widths": list(self.stage_widths),
                "input_resolution": self.input_resolution,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "NetworkSpec":
        d = json.loads(text)
        return NetworkSpec(
            kind=d["kind"],
            stages=d["stages"],
            convs_per_stage=d["convs_per_stage"],
            stage_widths=tuple(d["stage_widths"]),
            input_resolution=d["input_resolution"],
        )


@dataclass
class Parameters:
    """Named tensors of one network: trainable weights plus BN buffers.

    `version` is bumped by every optimizer step so stale forward caches
    can be detected in backward().
    """

    spec: NetworkSpec
    tensors: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    version: int = 0

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def parameter_count(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    def copy(self) -> "Parameters":
        return Parameters(
            self.spec,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.version,
        )

    def astype(self, dtype) -> "Parameters":
        return Parameters(
            self.spec,
            {k: v.astype(dtype) for k, v in self.tensors.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.version,
        )


def _stage_convs(cin: int, width: int, cout: int, k: int):
    """Channel pairs of a stage's conv run: cin -> width ... width -> cout."""
    if k == 1:
        return [(cin, cout)]
    return [(cin, width)] + [(width, width)] * (k - 2) + [(width, cout)]


def _plan(spec: NetworkSpec):
    """Per-stage conv channel plans for encoder and decoder.

    Decoder stage s receives stage_widths[s] channels from below; with
    skips the concatenation doubles that. Its run ends at
    stage_widths[s-1] (stage_widths[0] for the last stage), which is
    exactly what the next-shallower decoder stage expects from below.
    """
    k = spec.convs_per_stage
    enc = []
    cin = 1
    for s in range(spec.stages):
        w = spec.stage_widths[s]
        enc.append(_stage_convs(cin, w, w, k))
        cin = w
    dec = {}
    for s in range(spec.stages - 1, -1, -1):
        w = spec.stage_widths[s]
        cin_s = 2 * w if spec.has_skips else w
        cout = spec.stage_widths[s - 1] if s > 0 else spec.stage_widths[0]
        dec[s] = _stage_convs(cin_s, w, cout, k)
    return enc, dec


def _he_kernel(rng, cout, cin, dtype):
    fan_in = cin * 27
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, 3, 3, 3)).astype(dtype)


def build_network(spec: NetworkSpec, seed: int, dtype=np.float32) -> Parameters:
    """He-initialized parameters for the given spec, deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = Parameters(spec)

    def add_conv(prefix, cin, cout):
        params.tensors[f"{prefix}.w"] = _he_kernel(rng, cout, cin, dtype)
        params.tensors[f"{prefix}.b"] = np.zeros(cout, dtype=dtype)

    def add_bn(prefix, c):
        params.tensors[f"{prefix}.gamma"] = np.ones(c, dtype=dtype)
        params.tensors[f"{prefix}.beta"] = np.zeros(c, dtype=dtype)
        params.buffers[f"{prefix}.running_mean"] = np.zeros(c, dtype=dtype)
        params.buffers[f"{prefix}.running_var"] = np.ones(c, dtype=dtype)

    def add_stage(prefix, convs):
        for j, (cin, cout) in enumerate(convs):
            add_conv(f"{prefix}.conv{j}", cin, cout)
            add_bn(f"{prefix}.bn{j}", cout)
        if spec.residual and convs[0][0] != convs[-1][1]:
            cin, cout = convs[0][0], convs[-1][1]
            params.tensors[f"{prefix}.proj.w"] = rng.normal(
                0.0, np.sqrt(2.0 / cin), size=(cout, cin)
            ).astype(dtype)
            params.tensors[f"{prefix}.proj.b"] = np.zeros(cout, dtype=dtype)
            add_bn(f"{prefix}.projbn", cout)

    enc, dec = _plan(spec)
    for s, convs in enumerate(enc):
        add_stage(f"enc{s}", convs)
    for s in range(spec.stages - 1, -1, -1):
        add_stage(f"dec{s}", dec[s])
    head_in = dec[0][-1][1]
    params.tensors["head.w"] = rng.normal(
        0.0, np.sqrt(2.0 / head_in), size=(1, head_in)
    ).astype(dtype)
    params.tensors["head.b"] = np.zeros(1, dtype=dtype)
    return params


def expected_parameter_count(spec: NetworkSpec) -> int:
    """Trainable parameter count from the channel bookkeeping alone."""
    enc, dec = _plan(spec)
    total = 0
    for convs in list(enc) + [dec[s] for s in range(spec.stages)]:
        for cin, cout in convs:
            total += 27 * cin * cout + cout  # kernel + bias
            total += 2 * cout  # gamma + beta
        if spec.residual and convs[0][0] != convs[-1][1]:
            cin, cout = convs[0][0], convs[-1][1]
            total += cin * cout + cout + 2 * cout
    head_in = dec[0][-1][1]
    return total + head_in + 1


# ---------------------------------------------------------------------------
# forward / backward


def grids_to_batch(grids, dtype=np.float32) -> np.ndarray:
    """Stack VoxelGrids (or one grid) into a (B, 1, R, R, R) batch."""
    if isinstance(grids, VoxelGrid):
        grids = [grids]
    return np.stack([np.asarray(g.values, dtype=dtype) for g in grids])[:, None]


def _conv_bn(params, prefix, j, x, mode, tape, relu=True):
    w = params.tensors[f"{prefix}.conv{j}.w"]
    b = params.tensors[f"{prefix}.conv{j}.b"]
    y = layers.conv3d_forward(x, w, b)
    rm = params.buffers[f"{prefix}.bn{j}.running_mean"]
    rv = params.buffers[f"{prefix}.bn{j}.running_var"]
    y, bn_cache, new_rm, new_rv = layers.batchnorm_forward(
        y,
        params.tensors[f"{prefix}.bn{j}.gamma"],
        params.tensors[f"{prefix}.bn{j}.beta"],
        rm,
        rv,
        mode,
    )
    if mode == "train":
        rm[...] = new_rm
        rv[...] = new_rv
    mask = None
    if relu:
        y, mask = layers.relu_forward(y)
    if tape is not None:
        tape.append({"x": x, "bn": bn_cache, "relu": mask, "prefix": prefix, "j": j})
    return y


def _conv_bn_backward(params, grads, entry, dy):
    prefix, j = entry["prefix"], entry["j"]
    if entry["relu"] is not None:
        dy = layers.relu_backward(dy, entry["relu"])
    dy, dgamma, dbeta = layers.batchnorm_backward(dy, entry["bn"])
    grads[f"{prefix}.bn{j}.gamma"] = dgamma
    grads[f"{prefix}.bn{j}.beta"] = dbeta
    dx, dw, db = layers.conv3d_backward(
        dy, entry["x"], params.tensors[f"{prefix}.conv{j}.w"]
    )
    grads[f"{prefix}.conv{j}.w"] = dw
    grads[f"{prefix}.conv{j}.b"] = db
    return dx


def _stage_forward(params, prefix, n_convs, x, mode, tape):
    spec = params.spec
    if not spec.residual:
        h = x
        for j in range(n_convs):
            h = _conv_bn(params, prefix, j, h, mode, tape)
        return h
    # residual block: conv run without final ReLU, plus shortcut, then ReLU
    h = x
    for j in range(n_convs):
        h = _conv_bn(params, prefix, j, h, mode, tape, relu=(j < n_convs - 1))
    proj_key = f"{prefix}.proj.w"
    if proj_key in params.tensors:
        s = layers.conv1x1_forward(x, params.tensors[proj_key], params.tensors[f"{prefix}.proj.b"])
        rm = params.buffers[f"{prefix}.projbn.running_mean"]
        rv = params.buffers[f"{prefix}.projbn.running_var"]
        s, proj_bn, new_rm, new_rv = layers.batchnorm_forward(
            s,
            params.tensors[f"{prefix}.projbn.gamma"],
            params.tensors[f"{prefix}.projbn.beta"],
            rm,
            rv,
            mode,
        )
        if mode == "train":
            rm[...] = new_rm
            rv[...] = new_rv
    else:
        s, proj_bn = x, None
    out, mask = layers.relu_forward(h + s)
    if tape is not None:
        tape.append(
            {
                "residual": True,
                "x": x,
                "proj_bn": proj_bn,
                "out_relu": mask,
                "prefix": prefix,
            }
        )
    return out


def _stage_backward(params, grads, tape_slice, dy):
    """Backward through one stage's tape entries (reversed)."""
    entries = list(tape_slice)
    if entries and entries[-1].get("residual"):
        res = entries.pop()
        dy = layers.relu_backward(dy, res["out_relu"])
        dshort = dy
        prefix = res["prefix"]
        if res["proj_bn"] is not None:
            ds, dgamma, dbeta = layers.batchnorm_backward(dshort, res["proj_bn"])
            grads[f"{prefix}.projbn.gamma"] = dgamma
            grads[f"{prefix}.projbn.beta"] = dbeta
            ds, dw, db = layers.conv1x1_backward(ds, res["x"], params.tensors[f"{prefix}.proj.w"])
            grads[f"{prefix}.proj.w"] = dw
            grads[f"{prefix}.proj.b"] = db
        else:
            ds = dshort
        dbranch = dy
        for entry in reversed(entries):
            dbranch = _conv_bn_backward(params, grads, entry, dbranch)
        return dbranch + ds
    for entry in reversed(entries):
        dy = _conv_bn_backward(params, grads, entry, dy)
    return dy


def forward(params: Parameters, batch, mode: str = "infer"):
    """Per-voxel affordance probabilities for a batch of occupancy grids.

    `batch` may be an ndarray of shape (B, 1, R, R, R) or (B, R, R, R), a
    VoxelGrid, or a sequence of VoxelGrids. Returns (probabilities, cache);
    the cache is kept only in train mode (it is what backward consumes).
    Train mode updates BN running statistics in place.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    spec = params.spec
    if not isinstance(batch, np.ndarray):
        batch = grids_to_batch(batch, dtype=params.dtype)
    x = np.asarray(batch, dtype=params.dtype)
    if x.ndim == 4:
        x = x[:, None]
    if x.ndim != 5 or x.shape[1] != 1:
        raise ShapeError(f"expected (B, 1, R, R, R) input, got shape {batch.shape}")
    r = spec.input_resolution
    if x.shape[2:] != (r, r, r):
        raise ShapeError(f"spec expects {r}^3 grids, got {x.shape[2:]}")

    tape = [] if mode == "train" else None
    enc_plan, dec_plan = _plan(spec)
    cache = {"version": params.version, "mode": mode, "stages": {}} if mode == "train" else None

    skips = []
    h = x
    for s, convs in enumerate(enc_plan):
        mark = len(tape) if tape is not None else 0
        h = _stage_forward(params, f"enc{s}", len(convs), h, mode, tape)
        if cache is not None:
            cache["stages"][f"enc{s}"] = tape[mark:]
        skips.append(h)
        h, pool_cache = layers.maxpool3d_forward(h)
        if cache is not None:
            cache["stages"][f"pool{s}"] = pool_cache

    for s in range(spec.stages - 1, -1, -1):
        h = layers.upsample3d_forward(h)
        if spec.has_skips:
            h = np.concatenate([h, skips[s]], axis=1)
        mark = len(tape) if tape is not None else 0
        h = _stage_forward(params, f"dec{s}", len(dec_plan[s]), h, mode, tape)
        if cache is not None:
            cache["stages"][f"dec{s}"] = tape[mark:]

    logits = layers.conv1x1_forward(h, params.tensors["head.w"], params.tensors["head.b"])
    probs = layers.sigmoid_forward(logits)
    if cache is not None:
        cache["head_in"] = h
        cache["probs"] = probs
    return probs, cache


def backward(params: Parameters, cache, dprobs: np.ndarray) -> dict:
    """Exact gradients of a scalar loss w.r.t. every trainable tensor.

    `dprobs` is the loss gradient at the sigmoid output, as returned by
    bce_loss. The cache must come from a train-mode forward on the current
    parameters.
    """
    if cache is None or cache.get("mode") != "train":
        raise CacheMismatch("backward needs a train-mode forward cache")
    if cache.get("version") != params.version:
        raise CacheMismatch(
            f"cache built at parameter version {cache.get('version')}, "
            f"parameters now at {params.version}"
        )
    spec = params.spec
    grads = {}
    dlogits = layers.sigmoid_backward(np.asarray(dprobs, dtype=params.dtype), cache["probs"])
    dh, dw, db = layers.conv1x1_backward(dlogits, cache["head_in"], params.tensors["head.w"])
    grads["head.w"] = dw
    grads["head.b"] = db

    dskips = [None] * spec.stages
    for s in range(spec.stages):
        dh = _stage_backward(params, grads, cache["stages"][f"dec{s}"], dh)
        if spec.has_skips:
            w = spec.stage_widths[s]
            dup, dskip = dh[:, :w], dh[:, w:]
            dskips[s] = dskip
        else:
            dup = dh
        dh = layers.upsample3d_backward(dup)

    for s in range(spec.stages - 1, -1, -1):
        dh = layers.maxpool3d_backward(dh, cache["stages"][f"pool{s}"])
        if dskips[s] is not None:
            dh = dh + dskips[s]
        dh = _stage_backward(params, grads, cache["stages"][f"enc{s}"], dh)
    return grads
