"""Lossless space/time-to-channel codec standing in for the video VAE.

A ``(C, F, H, W)`` video becomes a ``(C*4*p*p, F/4, H/p, W/p)`` latent grid:
each 4-frame, p x p pixel block is one latent cell. The rearrangement is a
pure permutation, so decode(encode(x)) is bitwise exact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

TEMPORAL_STRIDE = 4


@dataclass
class LatentGrid:
    values: np.ndarray  # (C', f, h, w)
    channels: int  # pixel channels C of the source video
    temporal_stride: int = TEMPORAL_STRIDE
    spatial_stride: int = 2

    @property
    def shape(self):
        return self.values.shape


def latent_channels(channels, p, temporal_stride=TEMPORAL_STRIDE):
    return channels * temporal_stride * p * p


def encode(video, p=2, temporal_stride=TEMPORAL_STRIDE):
    video = np.asarray(video, dtype=np.float64)
    C, F, H, W = video.shape
    s = temporal_stride
    if F % s or H % p or W % p:
        raise ConfigError(f"video {video.shape} not divisible by strides ({s}, {p}, {p})")
    v = video.reshape(C, F // s, s, H // p, p, W // p, p)
    # (C, s, p, p) become the channel axis; (f, h, w) the grid
    v = v.transpose(0, 2, 4, 6, 1, 3, 5).reshape(C * s * p * p, F // s, H // p, W // p)
    return LatentGrid(np.ascontiguousarray(v), C, s, p)


def decode(latent):
    z = latent.values
    C, s, p = latent.channels, latent.temporal_stride, latent.spatial_stride
    Cz, f, h, w = z.shape
    if Cz != C * s * p * p:
        raise DimensionError(f"latent has {Cz} channels, expected {C}*{s}*{p}*{p}={C * s * p * p}")
    v = z.reshape(C, s, p, p, f, h, w).transpose(0, 4, 1, 5, 2, 6, 3)
    return np.ascontiguousarray(v.reshape(C, f * s, h * p, w * p))


def latent_poses(poses, temporal_stride=TEMPORAL_STRIDE):
    """Per-latent-frame poses: mean translation over each frame group, the
    group's first rotation. Returns a flattened (f, 12) array."""
    flat = poses.flatten()
    F = flat.shape[0]
    if F % temporal_stride:
        raise ConfigError(f"{F} poses not divisible by {temporal_stride}")
    g = flat.reshape(F // temporal_stride, temporal_stride, 12)
    out = g[:, 0].copy()
    out[:, 9:] = g[:, :, 9:].mean(axis=1)
    return out
