"""Decoders (pyramid fusion, FCN, identity) and task heads."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .backbones import BatchNorm2d, init_weights
from .features import FeatureInfo, ShapeMismatch
from .registry import DECODER_REGISTRY, HEAD_REGISTRY


class PyramidShapeError(ShapeMismatch):
    pass


class NoGridInput(ShapeMismatch):
    pass


class KindMismatch(ShapeMismatch):
    pass


def conv_bn_relu(cin: int, cout: int, k: int = 3) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, padding=k // 2, bias=False),
        BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def _resize(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class Decoder(nn.Module):
    requires_form: str | None = "grid"
    out_channels: int
    out_form: str = "grid"


class PoolingPyramid(nn.Module):
    def __init__(self, in_channels: int, channels: int, pool_scales: Sequence[int]):
        super().__init__()
        # no normalization on the pooled branches (a 1x1 map has no spatial statistics)
        self.branches = nn.ModuleList(
            nn.Sequential(nn.AdaptiveAvgPool2d(s), nn.Conv2d(in_channels, channels, 1), nn.ReLU(inplace=True))
            for s in pool_scales
        )
        self.bottleneck = conv_bn_relu(in_channels + len(pool_scales) * channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[-2:]
        pooled = [_resize(branch(x), size) for branch in self.branches]
        return self.bottleneck(torch.cat([x, *pooled], dim=1))


class PyramidFusionDecoder(Decoder):
    """UPerNet-style decoder.

    The coarsest map goes through a pooling pyramid (pool sizes 1, 2, 3, 6);
    the others get 1x1 lateral projections.  Top-down upsample-and-add
    fusion follows, then every level is resized to the finest resolution,
    concatenated and fused by a 3x3 conv.
    """

    def __init__(self, info: FeatureInfo, channels: int = 128, pool_scales: Sequence[int] = (1, 2, 3, 6)):
        super().__init__()
        if info.form != "grid":
            raise PyramidShapeError("pyramid_fusion needs grid-form inputs")
        if len(info) < 2:
            raise PyramidShapeError(f"pyramid_fusion needs >= 2 feature maps, got {len(info)}")
        self.in_channels = list(info.channels)
        n = len(info)
        # fine-to-coarse order; reductions tell it apart at build time
        if info.reductions is not None:
            self.order = sorted(range(n), key=lambda i: info.reductions[i])
        else:
            self.order = list(range(n))
        self.coarsest = self.order[-1]
        self.channels = channels
        self.out_channels = channels
        self.ppm = PoolingPyramid(self.in_channels[self.coarsest], channels, pool_scales)
        self.laterals = nn.ModuleDict(
            {str(i): conv_bn_relu(self.in_channels[i], channels, k=1) for i in self.order[:-1]}
        )
        self.fpn_convs = nn.ModuleDict({str(i): conv_bn_relu(channels, channels) for i in self.order[:-1]})
        self.fuse = conv_bn_relu(n * channels, channels)
        init_weights(self)

    def _forward_order(self, features: Sequence[torch.Tensor]) -> list[int]:
        n = len(features)
        if n != len(self.in_channels):
            raise PyramidShapeError(f"expected {len(self.in_channels)} feature maps, got {n}")
        for i, f in enumerate(features):
            if f.ndim != 4:
                raise PyramidShapeError(f"feature {i} is not grid-form: {tuple(f.shape)}")
        order = sorted(range(n), key=lambda i: -features[i].shape[-1])
        if order != self.order:
            chans = [self.in_channels[i] for i in order]
            if chans != [self.in_channels[i] for i in self.order]:
                raise PyramidShapeError("feature sizes are not ordered as declared at build time")
            order = self.order
        sizes = [tuple(features[i].shape[-2:]) for i in order]
        for (h0, w0), (h1, w1) in zip(sizes, sizes[1:]):
            if h1 not in (h0 // 2, -(-h0 // 2)) or w1 not in (w0 // 2, -(-w0 // 2)):
                raise PyramidShapeError(f"sizes must halve from level to level, got {sizes}")
        return order

    def forward(self, features: Sequence[torch.Tensor]) -> torch.Tensor:
        order = self._forward_order(features)
        levels = [self.laterals[str(i)](features[i]) for i in order[:-1]]
        levels.append(self.ppm(features[order[-1]]))
        for j in range(len(levels) - 1, 0, -1):
            levels[j - 1] = levels[j - 1] + _resize(levels[j], levels[j - 1].shape[-2:])
        outs = [self.fpn_convs[str(i)](lvl) for i, lvl in zip(order[:-1], levels[:-1])]
        outs.append(levels[-1])
        finest = outs[0].shape[-2:]
        return self.fuse(torch.cat([_resize(o, finest) for o in outs], dim=1))


class FCNDecoder(Decoder):
    """``num_convs`` 3x3 conv blocks on the last feature map only."""

    def __init__(self, info: FeatureInfo, channels: int = 128, num_convs: int = 2):
        super().__init__()
        if info.form != "grid":
            raise NoGridInput("fcn needs a grid-form last feature map")
        cin = info.channels[-1]
        if num_convs == 0:
            self.convs = nn.Conv2d(cin, channels, 1)
        else:
            blocks = [conv_bn_relu(cin if i == 0 else channels, channels) for i in range(num_convs)]
            self.convs = nn.Sequential(*blocks)
        self.out_channels = channels
        init_weights(self)

    def forward(self, features: Sequence[torch.Tensor]) -> torch.Tensor:
        x = features[-1]
        if x.ndim != 4:
            raise NoGridInput(f"last feature map is not grid-form: {tuple(x.shape)}")
        return self.convs(x)


class IdentityDecoder(Decoder):
    requires_form = None

    def __init__(self, info: FeatureInfo):
        super().__init__()
        if len(info) != 1:
            raise ShapeMismatch(f"identity decoder takes exactly 1 feature map, got {len(info)}")
        self.out_channels = info.channels[0]
        self.out_form = info.form

    def forward(self, features: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(features) != 1:
            raise ShapeMismatch(f"identity decoder takes exactly 1 feature map, got {len(features)}")
        return features[0]


_decoders = DECODER_REGISTRY.namespace("")
_decoders.register("pyramid_fusion", PyramidFusionDecoder, defaults=dict(channels=128))
_decoders.register("fcn", FCNDecoder, defaults=dict(channels=128, num_convs=2))
_decoders.register("identity", IdentityDecoder)


class PixelHead(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, dropout: float = 0.0, in_form: str = "grid"):
        super().__init__()
        if in_form != "grid":
            raise KindMismatch(f"{self.kind} head needs grid-form decoder output, got {in_form}")
        self.dropout = nn.Dropout(dropout)
        self.conv = nn.Conv2d(in_channels, out_channels, 1)
        self.out_channels = out_channels
        init_weights(self)

    def forward(self, x: torch.Tensor, target_hw=None) -> torch.Tensor:
        if x.ndim != 4:
            raise KindMismatch(f"{self.kind} head needs (B, C, H, W), got {tuple(x.shape)}")
        x = self.conv(self.dropout(x))
        if target_hw is not None:
            x = _resize(x, tuple(target_hw))
        return x


class SegmentationHead(PixelHead):
    kind = "segmentation"

    def __init__(self, in_channels: int, num_classes: int, dropout: float = 0.0, in_form: str = "grid"):
        if num_classes < 2:
            raise ValueError("segmentation needs num_classes >= 2")
        super().__init__(in_channels, num_classes, dropout, in_form)


class RegressionHead(PixelHead):
    kind = "regression"

    def __init__(self, in_channels: int, dropout: float = 0.0, in_form: str = "grid", num_classes=None):
        super().__init__(in_channels, 1, dropout, in_form)


class ClassificationHead(nn.Module):
    kind = "classification"

    def __init__(self, in_channels: int, num_classes: int, dropout: float = 0.0, in_form: str = "grid"):
        super().__init__()
        if num_classes < 2:
            raise ValueError("classification needs num_classes >= 2")
        self.dropout = nn.Dropout(dropout)
        self.fc = nn.Linear(in_channels, num_classes)
        self.out_channels = num_classes
        init_weights(self)

    def forward(self, x: torch.Tensor, target_hw=None) -> torch.Tensor:
        if x.ndim == 4:
            x = x.mean(dim=(2, 3))
        elif x.ndim == 3:
            x = x.mean(dim=1)
        else:
            raise KindMismatch(f"classification head got {tuple(x.shape)}")
        return self.fc(self.dropout(x))


_heads = HEAD_REGISTRY.namespace("")
_heads.register("segmentation", SegmentationHead)
_heads.register("regression", RegressionHead)
_heads.register("classification", ClassificationHead)
