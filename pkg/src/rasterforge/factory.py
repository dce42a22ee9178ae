"""Encoder-decoder model factory.

``build_model`` resolves a :class:`ModelBuildSpec` against the registries and
wires ``head(decoder(necks(backbone(x))))``.  Every build ends with a dry-run
forward on zeros so that shape errors surface at construction time with the
failing stage named.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import torch
from torch import nn

from .backbones import remap_patch_embedding
from .checkpoint import load_checkpoint
from .decoders import Decoder
from .features import FeatureInfo
from .necks import build_necks
from .registry import BACKBONE_REGISTRY, DECODER_REGISTRY, HEAD_REGISTRY, RegistryError


class ResolveError(LookupError):
    pass


class ShapeIncompatibility(ValueError):
    pass


class CheckpointBandMismatch(ValueError):
    pass


@dataclass
class BackboneSpec:
    name: str = "toy_conv_pyramid"
    args: dict[str, Any] = field(default_factory=dict)
    pretrained: str | None = None
    bands: list[str] | None = None


@dataclass
class NeckSpec:
    name: str
    args: dict[str, Any] = field(default_factory=dict)


@dataclass
class DecoderSpec:
    name: str = "pyramid_fusion"
    args: dict[str, Any] = field(default_factory=dict)


@dataclass
class HeadSpec:
    kind: str | None = None
    num_classes: int | None = None
    dropout: float = 0.0


@dataclass
class ModelBuildSpec:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    necks: list[NeckSpec] = field(default_factory=list)
    decoder: DecoderSpec = field(default_factory=DecoderSpec)
    head: HeadSpec = field(default_factory=HeadSpec)
    freeze_backbone: bool = False
    img_size: int | None = None


class EncoderDecoderModel(nn.Module):
    def __init__(
        self,
        backbone: nn.Module,
        necks: nn.ModuleList,
        decoder: nn.Module,
        head: nn.Module,
        freeze_backbone: bool = False,
    ):
        super().__init__()
        self.backbone = backbone
        self.necks = necks
        self.decoder = decoder
        self.head = head
        self.freeze_backbone = freeze_backbone
        if freeze_backbone:
            for p in self.backbone.parameters():
                p.requires_grad_(False)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.freeze_backbone:
            # keep normalization statistics frozen as well
            self.backbone.eval()
        return self

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = self.backbone(x)
        for neck in self.necks:
            feats = neck(feats)
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.decoder(self.features(x)), target_hw=x.shape[-2:])


def _infer_feature_info(backbone: nn.Module, example: torch.Tensor) -> FeatureInfo:
    info = getattr(backbone, "feature_info", None)
    if info is not None:
        return info
    # custom components without declared metadata: probe once
    with torch.no_grad():
        feats = backbone(example)
    if all(f.ndim == 4 for f in feats):
        H = example.shape[-1]
        return FeatureInfo(
            channels=tuple(f.shape[1] for f in feats),
            form="grid",
            reductions=tuple(H / f.shape[-1] for f in feats),
        )
    if all(f.ndim == 3 for f in feats):
        return FeatureInfo(channels=tuple(f.shape[-1] for f in feats), form="token")
    raise ShapeIncompatibility("backbone output mixes token-form and grid-form items")


def _example_input(backbone: nn.Module, img_size: int | None) -> torch.Tensor:
    size = img_size or getattr(backbone, "img_size", None) or 64
    bands = getattr(backbone, "in_bands", None)
    frames = getattr(backbone, "num_frames", 1)
    if bands is None:
        raise ShapeIncompatibility("backbone does not declare in_bands; cannot size the dry run")
    return torch.zeros(1, frames, len(bands), size, size)


def _build_head(spec_or_module, decoder: nn.Module):
    if isinstance(spec_or_module, nn.Module):
        return spec_or_module
    spec = spec_or_module
    if spec.kind is None:
        raise ShapeIncompatibility("head kind is not set")
    kwargs: dict[str, Any] = dict(
        in_channels=decoder.out_channels,
        dropout=spec.dropout,
        in_form=getattr(decoder, "out_form", "grid"),
    )
    if spec.kind != "regression":
        kwargs["num_classes"] = spec.num_classes
    try:
        return HEAD_REGISTRY.build(spec.kind, **kwargs)
    except RegistryError as e:
        raise ResolveError(str(e)) from e
    except ValueError as e:
        raise ShapeIncompatibility(f"stage head: {e}") from e


def _dry_run(model: EncoderDecoderModel, example: torch.Tensor, head_kind: str | None) -> None:
    was_training = model.training
    model.eval()
    stage, shapes = "backbone", [tuple(example.shape)]
    try:
        with torch.no_grad():
            feats = model.backbone(example)
            for i, neck in enumerate(model.necks):
                shapes = [tuple(f.shape) for f in feats]
                stage = f"neck[{i}] {type(neck).__name__}"
                feats = neck(feats)
            shapes = [tuple(f.shape) for f in feats]
            stage = f"decoder {type(model.decoder).__name__}"
            dec = model.decoder(feats)
            shapes = [tuple(dec.shape)]
            stage = f"head {type(model.head).__name__}"
            out = model.head(dec, target_hw=example.shape[-2:])
    except Exception as e:
        raise ShapeIncompatibility(f"stage {stage} failed on input shapes {shapes}: {e}") from e
    finally:
        model.train(was_training)
    H, W = example.shape[-2:]
    if head_kind in ("segmentation", "regression") and tuple(out.shape[-2:]) != (H, W):
        raise ShapeIncompatibility(f"head output {tuple(out.shape)} does not match input size {H}x{W}")


def build_backbone(spec: ModelBuildSpec, rng_seed: int = 0) -> nn.Module:
    """Resolve and construct the backbone, loading pretrained weights if given."""
    args = dict(spec.backbone.args)
    if spec.backbone.bands is not None:
        args["in_bands"] = list(spec.backbone.bands)
    if spec.img_size is not None and _accepts(spec.backbone.name, "img_size"):
        args.setdefault("img_size", spec.img_size)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(rng_seed)
        try:
            backbone = BACKBONE_REGISTRY.build(spec.backbone.name, **args)
        except RegistryError as e:
            raise ResolveError(str(e)) from e
    if spec.backbone.pretrained:
        load_pretrained(backbone, spec.backbone.pretrained, rng_seed)
    return backbone


def _accepts(name: str, arg: str) -> bool:
    import inspect

    try:
        builder = BACKBONE_REGISTRY.resolve(name).builder
    except RegistryError as e:
        raise ResolveError(str(e)) from e
    return arg in inspect.signature(builder).parameters


def load_pretrained(backbone: nn.Module, path: str, rng_seed: int = 0) -> None:
    """Load backbone weights, remapping the input projection by band name."""
    state, meta = load_checkpoint(path)
    if any(k.startswith("backbone.") for k in state):
        state = {k[len("backbone."):]: v for k, v in state.items() if k.startswith("backbone.")}
    pre_bands = meta.get("bands")
    if pre_bands is None:
        raise CheckpointBandMismatch(f"{path} carries no band metadata; refusing positional channel matching")
    target = list(backbone.in_bands)
    key = backbone.input_conv_key
    if list(pre_bands) != target:
        w = state[key]
        frames = w.shape[1] // len(pre_bands)
        if frames * len(pre_bands) != w.shape[1]:
            raise CheckpointBandMismatch(f"{key} has {w.shape[1]} channels for {len(pre_bands)} bands")
        # frame-major channel blocks are remapped independently
        blocks = [
            remap_patch_embedding(w[:, f * len(pre_bands):(f + 1) * len(pre_bands)], pre_bands, target, rng_seed)
            for f in range(frames)
        ]
        state = dict(state)
        state[key] = torch.cat(blocks, dim=1)
    backbone.load_state_dict(state, strict=True)


def build_from_components(
    backbone: nn.Module,
    necks: Sequence = (),
    decoder: DecoderSpec | nn.Module | None = None,
    head: HeadSpec | nn.Module | None = None,
    freeze_backbone: bool = False,
    img_size: int | None = None,
    rng_seed: int = 0,
) -> EncoderDecoderModel:
    """Wire a prebuilt backbone (and optionally prebuilt necks/decoder/head).

    Spec-valued components are resolved from the registries; module-valued
    ones are used as given.  The wiring and dry-run check are the same as
    :func:`build_model`.
    """
    decoder = decoder if decoder is not None else DecoderSpec()
    head = head if head is not None else HeadSpec(kind="segmentation", num_classes=2)
    example = _example_input(backbone, img_size)
    info = _infer_feature_info(backbone, example)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(rng_seed + 1)
        try:
            neck_modules, info = build_necks(list(necks), info)
        except RegistryError as e:
            raise ResolveError(str(e)) from e
        except (ValueError, IndexError) as e:
            raise ShapeIncompatibility(f"stage necks: {e}") from e

        if isinstance(decoder, nn.Module):
            dec = decoder
        else:
            try:
                spec = DECODER_REGISTRY.resolve(decoder.name)
            except RegistryError as e:
                raise ResolveError(str(e)) from e
            required = getattr(spec.builder, "requires_form", None)
            if required is not None and info.form != required:
                raise ShapeIncompatibility(
                    f"decoder {decoder.name!r} needs {required}-form input but the neck pipeline "
                    f"produces {info.form}-form features {list(info.channels)}"
                )
            try:
                dec = spec.build(info=info, **decoder.args)
            except ValueError as e:
                raise ShapeIncompatibility(f"stage decoder: {e}") from e
        head_module = _build_head(head, dec)

    model = EncoderDecoderModel(backbone, neck_modules, dec, head_module, freeze_backbone)
    head_kind = head.kind if not isinstance(head, nn.Module) else getattr(head, "kind", None)
    _dry_run(model, example, head_kind)
    return model


def build_model(spec: ModelBuildSpec, rng_seed: int = 0) -> EncoderDecoderModel:
    backbone = build_backbone(spec, rng_seed)
    return build_from_components(
        backbone,
        necks=spec.necks,
        decoder=spec.decoder,
        head=spec.head,
        freeze_backbone=spec.freeze_backbone,
        img_size=spec.img_size,
        rng_seed=rng_seed,
    )


__all__ = [
    "BackboneSpec",
    "CheckpointBandMismatch",
    "Decoder",
    "DecoderSpec",
    "EncoderDecoderModel",
    "HeadSpec",
    "ModelBuildSpec",
    "NeckSpec",
    "ResolveError",
    "ShapeIncompatibility",
    "build_backbone",
    "build_from_components",
    "build_model",
    "load_pretrained",
]
