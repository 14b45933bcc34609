"""Channel-separate and full-channel feature generators.

``cs_fg`` rebuilds a feature map from crop patches that each keep a disjoint
block of channels, pooled to half the input resolution. ``fc_fg`` keeps every
channel of every patch and global-average-pools it into one long vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .anchors import Anchor, CropConfig, propose
from .errors import ConfigError, ShapeError
from .tensor import (Tensor, adaptive_avg_pool, check_anchor, concat_channels, crop_spatial,
                     global_avg_pool, slice_channels)


@dataclass
class CsFgOutput:
    tensor: Tensor
    patch_channel_ranges: list[tuple[int, int]]


@dataclass
class FcFgOutput:
    tensor: Tensor


def channel_ranges(channels: int, patches: int) -> list[tuple[int, int]]:
    """Split ``[0, channels)`` into ``patches`` blocks of ``channels // patches``;
    the last block takes the remainder."""
    if patches < 1 or channels < patches:
        raise ConfigError(f"need at least one channel per patch: {channels} channels, {patches} patches")
    step = channels // patches
    ranges = [(j * step, (j + 1) * step) for j in range(patches - 1)]
    ranges.append(((patches - 1) * step, channels))
    return ranges


def channel_separate_extract(f: Tensor, anchors: Sequence[Anchor]) -> CsFgOutput:
    n, c, h, w = f.shape
    if h < 2 or w < 2:
        raise ShapeError(f"channel-separate extraction needs H, W >= 2, got {f.shape}")
    ranges = channel_ranges(c, len(anchors))
    for a in anchors:
        check_anchor(f.shape, a)
    out_h, out_w = h // 2, w // 2
    patches = []
    for (lo, hi), a in zip(ranges, anchors):
        if a[3] - a[1] < out_h or a[2] - a[0] < out_w:
            raise ConfigError(
                f"patch {tuple(a)} is smaller than the {out_h}x{out_w} target; "
                "crop sigma must be at least 0.5 for channel-separate extraction"
            )
        patch = crop_spatial(slice_channels(f, lo, hi), a)
        patches.append(adaptive_avg_pool(patch, out_h, out_w))
    return CsFgOutput(concat_channels(patches), ranges)


def cs_fg(f: Tensor, cfg: CropConfig) -> CsFgOutput:
    _, _, h, w = f.shape
    return channel_separate_extract(f, propose(cfg, h, w))


def full_channel_extract(f: Tensor, anchors: Sequence[Anchor]) -> FcFgOutput:
    if not anchors:
        raise ConfigError("full-channel extraction needs at least one anchor")
    pooled = [global_avg_pool(crop_spatial(f, a)) for a in anchors]
    return FcFgOutput(concat_channels(pooled))


def fc_fg(f: Tensor, cfg: CropConfig) -> FcFgOutput:
    _, _, h, w = f.shape
    return full_channel_extract(f, propose(cfg, h, w))
