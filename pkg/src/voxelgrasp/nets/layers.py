"""Dense 3D tensor layers with explicit forward and backward passes.

Batches are arrays of shape (B, C, D, H, W). Each forward returns the
output plus whatever the matching backward needs; backwards return exact
reverse-mode gradients (verified against finite differences in the test
suite).
"""

from __future__ import annotations

import numpy as np

from ..errors import BatchTooSmall, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def conv3d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padding 3x3x3 cross-correlation.

    x: (B, Cin, D, H, W); kernel: (Cout, Cin, 3, 3, 3); bias: (Cout,).
    Output spatial shape equals input spatial shape.
    """
    if x.ndim != 5:
        raise ShapeError(f"expected a (B, C, D, H, W) batch, got shape {x.shape}")
    b, cin, d, h, w = x.shape
    if kernel.shape[1] != cin:
        raise ShapeError(
            f"kernel expects {kernel.shape[1]} input channels, batch has {cin}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    cout = kernel.shape[0]
    acc = np.zeros((cout, b, d, h, w), dtype=x.dtype)
    for dz in range(3):
        for dy in range(3):
            for dx in range(3):
                xs = xp[:, :, dz : dz + d, dy : dy + h, dx : dx + w]
                acc += np.tensordot(kernel[:, :, dz, dy, dx], xs, axes=(1, 1))
    return acc.transpose(1, 0, 2, 3, 4) + bias.reshape(1, -1, 1, 1, 1)


def conv3d_backward(dy: np.ndarray, x: np.ndarray, kernel: np.ndarray):
    """Gradients (dx, dkernel, dbias) of the same-padding convolution."""
    b, cin, d, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    dxp = np.zeros_like(xp)
    dkernel = np.empty_like(kernel)
    for dz in range(3):
        for dy_ in range(3):
            for dx_ in range(3):
                xs = xp[:, :, dz : dz + d, dy_ : dy_ + h, dx_ : dx_ + w]
                dkernel[:, :, dz, dy_, dx_] = np.tensordot(
                    dy, xs, axes=([0, 2, 3, 4], [0, 2, 3, 4])
                )
                # adjoint of the shifted accumulation
                contrib = np.tensordot(kernel[:, :, dz, dy_, dx_], dy, axes=(0, 1))
                dxp[:, :, dz : dz + d, dy_ : dy_ + h, dx_ : dx_ + w] += (
                    contrib.transpose(1, 0, 2, 3, 4)
                )
    dbias = dy.sum(axis=(0, 2, 3, 4))
    return dxp[:, :, 1:-1, 1:-1, 1:-1], dkernel, dbias


def conv1x1_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-voxel linear map over channels; weight: (Cout, Cin)."""
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(
            f"1x1x1 conv expects {weight.shape[1]} channels, batch has {x.shape[1]}"
        )
    y = np.tensordot(weight, x, axes=(1, 1)).transpose(1, 0, 2, 3, 4)
    return y + bias.reshape(1, -1, 1, 1, 1)


def conv1x1_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray):
    dweight = np.tensordot(dy, x, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    dbias = dy.sum(axis=(0, 2, 3, 4))
    dx = np.tensordot(weight.T, dy, axes=(1, 1)).transpose(1, 0, 2, 3, 4)
    return dx, dweight, dbias


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
):
    """Per-channel batch normalization.

    Train mode normalizes by batch statistics (biased variance, eps 1e-5)
    and returns updated running statistics (momentum 0.9); infer mode uses
    the running statistics and returns them unchanged.

    Returns (y, cache, new_running_mean, new_running_var); cache is None
    in infer mode.
    """
    shape = (1, -1, 1, 1, 1)
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmall("batch normalization needs batch size >= 2 in train mode")
        axes = (0, 2, 3, 4)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        y = gamma.reshape(shape) * xhat + beta.reshape(shape)
        new_rm = BN_MOMENTUM * running_mean + (1.0 - BN_MOMENTUM) * mean
        new_rv = BN_MOMENTUM * running_var + (1.0 - BN_MOMENTUM) * var
        cache = (xhat, inv_std, gamma)
        return y, cache, new_rm, new_rv
    inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
    xhat = (x - running_mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return y, None, running_mean, running_var


def batchnorm_backward(dy: np.ndarray, cache):
    """Train-mode gradients (dx, dgamma, dbeta), including the dependence
    of the batch statistics on x."""
    xhat, inv_std, gamma = cache
    shape = (1, -1, 1, 1, 1)
    axes = (0, 2, 3, 4)
    n = dy.shape[0] * dy.shape[2] * dy.shape[3] * dy.shape[4]
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    dxhat = dy * gamma.reshape(shape)
    dx = (
        inv_std.reshape(shape)
        / n
        * (
            n * dxhat
            - dxhat.sum(axis=axes).reshape(shape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
        )
    )
    return dx, dgamma, dbeta


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def maxpool3d_forward(x: np.ndarray):
    """2x2x2 max pooling, stride 2; records the argmax for backward."""
    b, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be even to pool, got {(d, h, w)}")
    blocks = (
        x.reshape(b, c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(b, c, d // 2, h // 2, w // 2, 8)
    )
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape)


def maxpool3d_backward(dy: np.ndarray, cache) -> np.ndarray:
    arg, x_shape = cache
    b, c, d, h, w = x_shape
    dblocks = np.zeros((b, c, d // 2, h // 2, w // 2, 8), dtype=dy.dtype)
    np.put_along_axis(dblocks, arg[..., None], dy[..., None], axis=-1)
    return (
        dblocks.reshape(b, c, d // 2, h // 2, w // 2, 2, 2, 2)
        .transpose(0, 1, 2, 5, 3, 6, 4, 7)
        .reshape(x_shape)
    )


def upsample3d_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor doubling of each spatial dimension."""
    return x.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4)


def upsample3d_backward(dy: np.ndarray) -> np.ndarray:
    b, c, d, h, w = dy.shape
    return dy.reshape(b, c, d // 2, 2, h // 2, 2, w // 2, 2).sum(axis=(3, 5, 7))


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)
