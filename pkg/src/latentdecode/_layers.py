"""Minimal channels-last layer ops with input gradients.

Arrays are ``(..., H, W, C)``; any leading batch dims broadcast through.
Only gradients with respect to layer inputs are needed (weights are frozen).
"""
from __future__ import annotations

import numpy as np

_OFFSETS = [(i, j) for i in range(3) for j in range(3)]


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 convolution. ``w`` has shape (9 * C_in, C_out)."""
    h, wd, c = x.shape[-3:]
    pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(x, pad)
    out = np.empty(x.shape[:-1] + (w.shape[1],))
    out[...] = b
    for k, (i, j) in enumerate(_OFFSETS):
        out += xp[..., i:i + h, j:j + wd, :] @ w[k * c:(k + 1) * c]
    return out


def conv3x3_backward(g: np.ndarray, w: np.ndarray, in_channels: int) -> np.ndarray:
    h, wd = g.shape[-3], g.shape[-2]
    gp_patches = g @ w.T
    gx = np.zeros(g.shape[:-3] + (h + 2, wd + 2, in_channels))
    for k, (i, j) in enumerate(_OFFSETS):
        gx[..., i:i + h, j:j + wd, :] += gp_patches[..., k * in_channels:(k + 1) * in_channels]
    return gx[..., 1:-1, 1:-1, :]


def upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=-3), 2, axis=-2)


def upsample2_backward(g: np.ndarray) -> np.ndarray:
    h, w, c = g.shape[-3:]
    return g.reshape(g.shape[:-3] + (h // 2, 2, w // 2, 2, c)).sum(axis=(-4, -2))


def avgpool2(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape[-3:]
    return x.reshape(x.shape[:-3] + (h // 2, 2, w // 2, 2, c)).mean(axis=(-4, -2))


def avgpool2_backward(g: np.ndarray) -> np.ndarray:
    return upsample2(g) / 4.0


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))
