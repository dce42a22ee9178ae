"""Desk-scale backbones.

``ToyViT`` is a small multi-frame Vision Transformer that returns token-form
features; ``ConvPyramid`` is a four-stage convolutional encoder returning
grid-form features at strides 4, 8, 16 and 32.  Both expose ``feature_info``
and ``input_conv_key`` (the parameter that channel surgery rewrites).
"""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .features import FeatureInfo, ShapeMismatch
from .registry import BACKBONE_REGISTRY


class DuplicateBand(ValueError):
    pass


class EmptyTargetBands(ValueError):
    pass


class BatchNorm2d(nn.BatchNorm2d):
    """BatchNorm that uses running statistics when a training batch holds a
    single value per channel (batch 1 on a 1x1 map), instead of failing."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and x.shape[0] * x.shape[2] * x.shape[3] == 1:
            return F.batch_norm(x, self.running_mean, self.running_var, self.weight, self.bias, False, 0.0, self.eps)
        return super().forward(x)


def trunc_normal(tensor: torch.Tensor, std: float = 0.02) -> torch.Tensor:
    """Normal(0, std) truncated at two standard deviations."""
    return nn.init.trunc_normal_(tensor, std=std, a=-2 * std, b=2 * std)


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            trunc_normal(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.LayerNorm, nn.BatchNorm2d, nn.GroupNorm)):
            if m.weight is not None:
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)


def default_out_indices(depth: int, n: int = 4) -> list[int]:
    idx = sorted({max(0, round((i + 1) * depth / n) - 1) for i in range(n)})
    return idx


def _as_frames(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 4:
        return x.unsqueeze(1)
    if x.ndim != 5:
        raise ShapeMismatch(f"expected (B, T, C, H, W) or (B, C, H, W) input, got {tuple(x.shape)}")
    return x


class PatchEmbed(nn.Module):
    def __init__(self, in_chans: int, embed_dim: int, patch_size: int):
        super().__init__()
        self.proj = nn.Conv2d(in_chans, embed_dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x).flatten(2).transpose(1, 2)


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, N, D = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.num_heads, D // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(B, N, D))


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ToyViT(nn.Module):
    """Mini ViT without a class token.

    Each frame is patch-embedded with shared weights; a learned spatial
    position table and a learned per-frame embedding are added, and the
    frames are concatenated frame-major into one token sequence of length
    ``num_frames * (img_size // patch_size) ** 2``.
    """

    input_conv_key = "patch_embed.proj.weight"

    def __init__(
        self,
        in_bands: Sequence[str],
        img_size: int = 224,
        patch_size: int = 16,
        num_frames: int = 1,
        embed_dim: int = 64,
        depth: int = 12,
        num_heads: int = 4,
        out_indices: Sequence[int] | None = None,
        mlp_ratio: float = 4.0,
    ):
        super().__init__()
        if img_size % patch_size:
            raise ValueError(f"img_size {img_size} not divisible by patch_size {patch_size}")
        if embed_dim % num_heads:
            raise ValueError(f"embed_dim {embed_dim} not divisible by num_heads {num_heads}")
        if num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        out_indices = list(out_indices) if out_indices is not None else default_out_indices(depth)
        if not out_indices or any(not 0 <= i < depth for i in out_indices):
            raise ValueError(f"out_indices {out_indices} outside [0, {depth})")
        self.in_bands = list(in_bands)
        self.img_size = img_size
        self.patch_size = patch_size
        self.num_frames = num_frames
        self.embed_dim = embed_dim
        self.out_indices = sorted(out_indices)
        grid = img_size // patch_size
        self.grid_size = (grid, grid)

        self.patch_embed = PatchEmbed(len(self.in_bands), embed_dim, patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, grid * grid, embed_dim))
        self.temporal_embed = nn.Parameter(torch.zeros(1, num_frames, embed_dim))
        self.blocks = nn.ModuleList(Block(embed_dim, num_heads, mlp_ratio) for _ in range(depth))

        init_weights(self)
        trunc_normal(self.pos_embed)
        trunc_normal(self.temporal_embed)

    @property
    def feature_info(self) -> FeatureInfo:
        return FeatureInfo(
            channels=(self.embed_dim,) * len(self.out_indices),
            form="token",
            grid_size=self.grid_size,
            num_frames=self.num_frames,
            reductions=(float(self.patch_size),) * len(self.out_indices),
        )

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = _as_frames(x)
        B, T, C, H, W = x.shape
        if C != len(self.in_bands) or T != self.num_frames or H != self.img_size or W != self.img_size:
            raise ShapeMismatch(
                f"ToyViT expects (B, {self.num_frames}, {len(self.in_bands)}, "
                f"{self.img_size}, {self.img_size}), got {tuple(x.shape)}"
            )
        tokens = self.patch_embed(x.reshape(B * T, C, H, W)) + self.pos_embed
        tokens = tokens.reshape(B, T, -1, self.embed_dim) + self.temporal_embed[:, :, None]
        tokens = tokens.reshape(B, -1, self.embed_dim)

        out = []
        last = self.out_indices[-1]
        for i, blk in enumerate(self.blocks):
            tokens = blk(tokens)
            if i in self.out_indices:
                out.append(tokens)
            if i == last:
                break
        return out


def conv_bn_relu(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ConvPyramid(nn.Module):
    """Four-stage conv encoder; stage i has stride 4 * 2**i.

    Multi-frame inputs are folded into channels (frame-major), so the stem
    sees ``num_frames * len(in_bands)`` channels.
    """

    input_conv_key = "stem.0.weight"
    strides = (4, 8, 16, 32)

    def __init__(
        self,
        in_bands: Sequence[str],
        stage_channels: Sequence[int] = (32, 64, 128, 256),
        num_frames: int = 1,
    ):
        super().__init__()
        if len(stage_channels) != 4:
            raise ValueError("stage_channels must have 4 entries")
        self.in_bands = list(in_bands)
        self.num_frames = num_frames
        self.stage_channels = list(stage_channels)
        c0 = stage_channels[0]
        self.stem = nn.Sequential(
            nn.Conv2d(num_frames * len(self.in_bands), c0, 4, stride=4, bias=False),
            BatchNorm2d(c0),
            nn.ReLU(inplace=True),
            conv_bn_relu(c0, c0),
        )
        self.stages = nn.ModuleList(
            nn.Sequential(
                conv_bn_relu(stage_channels[i - 1], stage_channels[i], stride=2),
                conv_bn_relu(stage_channels[i], stage_channels[i]),
            )
            for i in range(1, 4)
        )
        init_weights(self)

    @property
    def feature_info(self) -> FeatureInfo:
        return FeatureInfo(
            channels=tuple(self.stage_channels),
            form="grid",
            num_frames=self.num_frames,
            reductions=tuple(float(s) for s in self.strides),
        )

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = _as_frames(x)
        B, T, C, H, W = x.shape
        if C != len(self.in_bands) or T != self.num_frames:
            raise ShapeMismatch(
                f"ConvPyramid expects {self.num_frames} frame(s) of {len(self.in_bands)} bands, "
                f"got {tuple(x.shape)}"
            )
        if H % 32 or W % 32:
            raise ShapeMismatch(f"spatial size must be divisible by 32, got {H}x{W}")
        x = self.stem(x.reshape(B, T * C, H, W))
        feats = [x]
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


BACKBONE_REGISTRY.namespace("toy").register(
    "toyvit",
    ToyViT,
    defaults=dict(img_size=224, patch_size=16, embed_dim=64, depth=12, num_heads=4, out_indices=list(range(12))),
    form="token",
)
BACKBONE_REGISTRY.namespace("toy").register(
    "toyvit_tiny",
    ToyViT,
    defaults=dict(img_size=64, patch_size=8, embed_dim=32, depth=4, num_heads=2, out_indices=[0, 1, 2, 3]),
    form="token",
)
BACKBONE_REGISTRY.namespace("toy").register(
    "conv_pyramid",
    ConvPyramid,
    defaults=dict(stage_channels=[32, 64, 128, 256]),
    form="grid",
)


def remap_patch_embedding(
    pretrained: torch.Tensor | np.ndarray,
    pre_bands: Sequence[str],
    target_bands: Sequence[str],
    rng_seed: int = 0,
) -> torch.Tensor | np.ndarray:
    """Rebuild an input-projection weight ``(d, C_pre, p, p)`` for new bands.

    Channels whose band name appears in ``pre_bands`` are copied verbatim.
    Every other channel is drawn from ``N(0, s)`` where ``s`` is the std of
    the copied weights (0.02 when nothing matches).  Each unseen band draws
    from its own stream keyed on ``(rng_seed, band name)``, so reordering
    ``target_bands`` only reorders the output channels.
    """
    pre_bands, target_bands = list(pre_bands), list(target_bands)
    for label, bands in (("pre_bands", pre_bands), ("target_bands", target_bands)):
        if len(set(bands)) != len(bands):
            dupes = sorted({b for b in bands if bands.count(b) > 1})
            raise DuplicateBand(f"duplicate names in {label}: {dupes}")
    if not target_bands:
        raise EmptyTargetBands("target_bands is empty")

    as_tensor = isinstance(pretrained, torch.Tensor)
    w = pretrained.detach().cpu().numpy() if as_tensor else np.asarray(pretrained)
    if w.ndim != 4 or w.shape[1] != len(pre_bands):
        raise ShapeMismatch(
            f"weight of shape {w.shape} does not match {len(pre_bands)} pretrained bands"
        )
    if target_bands == pre_bands:
        out = w.copy()
    else:
        pre_index = {b: i for i, b in enumerate(pre_bands)}
        matched = sorted(pre_index[b] for b in target_bands if b in pre_index)
        std = float(w[:, matched].std()) if matched else 0.02
        d, _, ph, pw = w.shape
        out = np.empty((d, len(target_bands), ph, pw), dtype=w.dtype)
        for j, band in enumerate(target_bands):
            if band in pre_index:
                out[:, j] = w[:, pre_index[band]]
            else:
                rng = np.random.default_rng([rng_seed, zlib.crc32(band.encode())])
                out[:, j] = rng.normal(0.0, std, size=(d, ph, pw)).astype(w.dtype)
    if as_tensor:
        return torch.from_numpy(out).to(dtype=pretrained.dtype, device=pretrained.device)
    return out
