"""Training loop: shuffled mini-batches, BCE, RMSprop, plateau decay,
per-epoch voxel IoU, best-validation-IoU parameter selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..dataset import sample_to_grids
from ..errors import EmptyInput, TrainingDiverged
from .loss import bce_loss
from .model import NetworkSpec, Parameters, build_network, forward, backward
from .optim import PlateauDecay, rmsprop_init, rmsprop_step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    rho: float = 0.9
    batch_size: int = 16
    plateau_patience: int = 5
    decay_factor: float = math.sqrt(0.1)
    min_lr: float = 0.5e-6
    max_epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must lie in (0, 1)")
        if not self.min_lr < self.learning_rate:
            raise ValueError("min_lr must be below learning_rate")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (train-mode BN)")


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    train_iou: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_iou: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_tsv(self) -> str:
        rows = [
            f"{e}\t{tl:.9g}\t{ti:.9g}\t{vl:.9g}\t{vi:.9g}\t{lr:.9g}"
            for e, (tl, ti, vl, vi, lr) in enumerate(
                zip(self.train_loss, self.train_iou, self.val_loss, self.val_iou, self.lr)
            )
        ]
        return "\n".join(rows) + "\n"

    @staticmethod
    def from_tsv(text: str) -> "TrainingHistory":
        hist = TrainingHistory()
        for row in text.splitlines():
            if not row.strip():
                continue
            _, tl, ti, vl, vi, lr = row.split("\t")
            hist.train_loss.append(float(tl))
            hist.train_iou.append(float(ti))
            hist.val_loss.append(float(vl))
            hist.val_iou.append(float(vi))
            hist.lr.append(float(lr))
        return hist


def samples_to_arrays(samples, resolution: int, dtype=np.float32):
    """Voxelize samples once into stacked (inputs, targets) batches."""
    xs, ys = [], []
    for s in samples:
        occ, aff = sample_to_grids(s, resolution)
        xs.append(occ.values.astype(dtype))
        ys.append(aff.values.astype(dtype))
    return np.stack(xs)[:, None], np.stack(ys)[:, None]


def _epoch_metrics(params, xs, ys, batch_size):
    """Inference-mode loss and voxel IoU over a dataset."""
    total_loss = 0.0
    inter = union = 0
    n = xs.shape[0]
    for lo in range(0, n, batch_size):
        xb, yb = xs[lo : lo + batch_size], ys[lo : lo + batch_size]
        probs, _ = forward(params, xb, mode="infer")
        loss, _ = bce_loss(probs, yb)
        total_loss += loss * xb.shape[0]
        pm = probs >= 0.5
        tm = yb >= 0.5
        inter += int(np.logical_and(pm, tm).sum())
        union += int(np.logical_or(pm, tm).sum())
    iou = 1.0 if union == 0 else inter / union
    return total_loss / n, iou


def train(spec: NetworkSpec, split, config: TrainConfig):
    """Train one network on a DatasetSplit; returns (parameters at the best
    validation voxel IoU, per-epoch history).

    Fully deterministic for a fixed config seed. Raises TrainingDiverged if
    the loss goes non-finite. Trailing batches of size 1 are dropped
    (train-mode BN needs at least 2 samples).
    """
    if not split.train or not split.validation:
        raise EmptyInput("train and validation splits must be nonempty")
    r = spec.input_resolution
    xs, ys = samples_to_arrays(split.train, r)
    vxs, vys = samples_to_arrays(split.validation, r)

    params = build_network(spec, config.seed)
    state = rmsprop_init(params)
    scheduler = PlateauDecay(
        lr=config.learning_rate,
        factor=config.decay_factor,
        patience=config.plateau_patience,
        min_lr=config.min_lr,
    )
    history = TrainingHistory()
    best_iou = -1.0
    best_params = params.copy()
    lr = config.learning_rate
    n = xs.shape[0]

    for epoch in range(config.max_epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        epoch_loss = 0.0
        seen = 0
        inter = union = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            if idx.size < 2:
                continue
            xb, yb = xs[idx], ys[idx]
            probs, cache = forward(params, xb, mode="train")
            loss, dprobs = bce_loss(probs, yb)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            grads = backward(params, cache, dprobs)
            rmsprop_step(params, grads, state, lr, config.rho)
            epoch_loss += loss * idx.size
            seen += idx.size
            pm = probs >= 0.5
            tm = yb >= 0.5
            inter += int(np.logical_and(pm, tm).sum())
            union += int(np.logical_or(pm, tm).sum())
        train_iou = 1.0 if union == 0 else inter / union
        val_loss, val_iou = _epoch_metrics(params, vxs, vys, config.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch)
        history.train_loss.append(epoch_loss / max(seen, 1))
        history.train_iou.append(train_iou)
        history.val_loss.append(val_loss)
        history.val_iou.append(val_iou)
        history.lr.append(lr)
        if val_iou > best_iou:
            best_iou = val_iou
            best_params = params.copy()
        lr = scheduler.step(val_loss)
    return best_params, history
