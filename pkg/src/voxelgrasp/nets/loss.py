"""Binary cross-entropy over voxel probabilities."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

CLAMP = 1e-7


def bce_loss(pred: np.ndarray, target: np.ndarray):
    """Mean binary cross-entropy and its gradient w.r.t. pred.

    pred is clamped into [1e-7, 1 - 1e-7] before the logs. The gradient is
    (p - t) / (p (1 - p)) / V with V the total element count, so composing
    with the sigmoid backward yields the familiar (p - t) / V.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, CLAMP, 1.0 - CLAMP)
    t = target
    loss = float(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean())
    grad = (p - t) / (p * (1.0 - p)) / p.size
    return loss, grad


def voxel_iou(pred: np.ndarray, target: np.ndarray, threshold: float = 0.5) -> float:
    """Intersection over union of thresholded prediction vs binary target.

    Defined as 1.0 when both sets are empty.
    """
    pm = np.asarray(pred) >= threshold
    tm = np.asarray(target) >= 0.5
    union = int(np.logical_or(pm, tm).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(pm, tm).sum() / union)
