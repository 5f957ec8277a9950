"""From-scratch volumetric CNN engine: layers, architectures, training."""

from .checkpoint import load_checkpoint, save_checkpoint
from .loss import bce_loss, voxel_iou
from .model import (
    ENC_DEC,
    KINDS,
    RES_UNET,
    UNET,
    NetworkSpec,
    Parameters,
    backward,
    build_network,
    expected_parameter_count,
    forward,
    grids_to_batch,
)
from .optim import PlateauDecay, rmsprop_init, rmsprop_step
from .train import TrainConfig, TrainingHistory, samples_to_arrays, train

__all__ = [
    "ENC_DEC",
    "UNET",
    "RES_UNET",
    "KINDS",
    "NetworkSpec",
    "Parameters",
    "PlateauDecay",
    "TrainConfig",
    "TrainingHistory",
    "backward",
    "bce_loss",
    "build_network",
    "expected_parameter_count",
    "forward",
    "grids_to_batch",
    "load_checkpoint",
    "rmsprop_init",
    "rmsprop_step",
    "samples_to_arrays",
    "save_checkpoint",
    "train",
    "voxel_iou",
]
