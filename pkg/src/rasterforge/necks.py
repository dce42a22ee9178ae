"""Adapters between backbone outputs and decoder inputs.

Every neck is built from the incoming :class:`FeatureInfo` plus its own
arguments and exposes the outgoing ``feature_info``.
"""

from __future__ import annotations

import math
from typing import Literal, Sequence

import torch
from torch import nn

from .backbones import BatchNorm2d, init_weights
from .features import FeatureInfo, ShapeMismatch
from .registry import NECK_REGISTRY


class IndexOutOfRange(IndexError):
    pass


class TokenCountMismatch(ShapeMismatch):
    pass


class LengthMismatch(ValueError):
    pass


class Neck(nn.Module):
    feature_info: FeatureInfo


def select_indices(features: Sequence[torch.Tensor], indices: Sequence[int]) -> list[torch.Tensor]:
    _check_indices(indices, len(features))
    return [features[i] for i in indices]


def _check_indices(indices: Sequence[int], n: int) -> None:
    if not indices:
        raise IndexOutOfRange("indices must be non-empty")
    for i in indices:
        if not 0 <= i < n:
            raise IndexOutOfRange(f"index {i} outside [0, {n})")
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise IndexOutOfRange(f"indices must be strictly increasing, got {list(indices)}")


class SelectIndices(Neck):
    def __init__(self, info: FeatureInfo, indices: Sequence[int]):
        super().__init__()
        self.indices = list(indices)
        _check_indices(self.indices, len(info))
        pick = lambda seq: tuple(seq[i] for i in self.indices) if seq is not None else None
        self.feature_info = info.with_(channels=pick(info.channels), reductions=pick(info.reductions))

    def forward(self, features: list[torch.Tensor]) -> list[torch.Tensor]:
        return select_indices(features, self.indices)


def reshape_tokens_to_image(
    features: Sequence[torch.Tensor],
    grid_hw: tuple[int, int],
    effective_time_dim: int = 1,
    temporal_reduce: Literal["mean", "concat_channels"] = "mean",
) -> list[torch.Tensor]:
    h, w = grid_hw
    T = effective_time_dim
    out = []
    for x in features:
        if x.ndim != 3:
            raise ShapeMismatch(f"expected token-form (B, N, d), got {tuple(x.shape)}")
        B, N, d = x.shape
        if N != T * h * w:
            raise TokenCountMismatch(f"{N} tokens cannot form {T} frame(s) of a {h}x{w} grid")
        # token order is frame-major, then row-major within a frame
        x = x.reshape(B, T, h, w, d).permute(0, 1, 4, 2, 3)
        if temporal_reduce == "mean":
            x = x.mean(dim=1)
        elif temporal_reduce == "concat_channels":
            x = x.reshape(B, T * d, h, w)
        else:
            raise ValueError(f"unknown temporal_reduce {temporal_reduce!r}")
        out.append(x.contiguous())
    return out


class ReshapeTokensToImage(Neck):
    def __init__(
        self,
        info: FeatureInfo,
        grid_hw: Sequence[int] | None = None,
        effective_time_dim: int | None = None,
        temporal_reduce: str = "mean",
    ):
        super().__init__()
        if info.form != "token":
            raise ShapeMismatch("reshape_tokens_to_image needs token-form input")
        grid = tuple(grid_hw) if grid_hw is not None else info.grid_size
        if grid is None:
            raise ShapeMismatch("grid_hw is required when the backbone does not declare a grid size")
        self.grid_hw = (int(grid[0]), int(grid[1]))
        self.effective_time_dim = effective_time_dim or info.num_frames
        if temporal_reduce not in ("mean", "concat_channels"):
            raise ValueError(f"unknown temporal_reduce {temporal_reduce!r}")
        self.temporal_reduce = temporal_reduce
        mult = self.effective_time_dim if temporal_reduce == "concat_channels" else 1
        self.feature_info = info.with_(
            channels=tuple(c * mult for c in info.channels), form="grid", grid_size=None
        )

    def forward(self, features: list[torch.Tensor]) -> list[torch.Tensor]:
        return reshape_tokens_to_image(
            features, self.grid_hw, self.effective_time_dim, self.temporal_reduce
        )


def _resampler(channels: int, scale: float) -> nn.Module:
    k = math.log2(scale)
    if k != int(k):
        raise ValueError(f"scale must be a power of two, got {scale}")
    k = int(k)
    if k == 0:
        return nn.Identity()
    if k < 0:
        return nn.MaxPool2d(kernel_size=2 ** -k, stride=2 ** -k)
    layers: list[nn.Module] = []
    for i in range(k):
        layers.append(nn.ConvTranspose2d(channels, channels, kernel_size=2, stride=2))
        if i < k - 1:
            layers += [BatchNorm2d(channels), nn.GELU()]
    return nn.Sequential(*layers)


class InterpolateToPyramid(Neck):
    """Resize equal-size grids into a pyramid with learned upsampling.

    Scale ``s > 1`` stacks ``log2(s)`` stride-2 transposed convolutions,
    ``s == 1`` is the identity and ``s < 1`` is max pooling.
    """

    def __init__(self, info: FeatureInfo, scales: Sequence[float] = (4, 2, 1, 0.5)):
        super().__init__()
        if info.form != "grid":
            raise ShapeMismatch("interpolate_to_pyramid needs grid-form input")
        self.scales = [float(s) for s in scales]
        if len(self.scales) != len(info):
            raise LengthMismatch(f"{len(self.scales)} scales for {len(info)} feature maps")
        self.resamplers = nn.ModuleList(
            _resampler(c, s) for c, s in zip(info.channels, self.scales)
        )
        init_weights(self)
        red = info.reductions
        self.feature_info = info.with_(
            reductions=tuple(r / s for r, s in zip(red, self.scales)) if red else None
        )

    def forward(self, features: list[torch.Tensor]) -> list[torch.Tensor]:
        if len(features) != len(self.scales):
            raise LengthMismatch(f"{len(self.scales)} scales for {len(features)} feature maps")
        if len({tuple(f.shape[-2:]) for f in features}) != 1:
            raise ShapeMismatch("interpolate_to_pyramid expects equal-size inputs")
        return [r(f) for r, f in zip(self.resamplers, features)]


_necks = NECK_REGISTRY.namespace("")
_necks.register("select_indices", SelectIndices)
_necks.register("reshape_tokens_to_image", ReshapeTokensToImage)
_necks.register("interpolate_to_pyramid", InterpolateToPyramid)


def build_necks(specs: Sequence, info: FeatureInfo) -> tuple[nn.ModuleList, FeatureInfo]:
    """Build a neck pipeline from ``(name, args)`` specs or prebuilt modules."""
    modules = nn.ModuleList()
    for spec in specs:
        if isinstance(spec, nn.Module):
            neck = spec
        else:
            name, args = (spec.name, spec.args) if hasattr(spec, "name") else (spec["name"], spec.get("args", {}))
            neck = NECK_REGISTRY.build(name, info=info, **(args or {}))
        info = neck.feature_info
        modules.append(neck)
    return modules, info
