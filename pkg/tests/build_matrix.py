"""Backbone x decoder x task combinations used by the factory and acceptance tests."""

import math

import torch
import torch.nn.functional as F

from rasterforge.factory import BackboneSpec, DecoderSpec, HeadSpec, ModelBuildSpec, NeckSpec
from rasterforge.fixtures import HLS_BANDS
from rasterforge.registry import BACKBONE_REGISTRY, list_components

NUM_CLASSES = 3


def _necks_for(backbone: str, decoder: str) -> tuple[list[NeckSpec], int]:
    spec = BACKBONE_REGISTRY.resolve(backbone)
    n_out = len(spec.defaults.get("out_indices", [0, 1, 2, 3]))
    img = spec.defaults.get("img_size", 64)
    if spec.metadata.get("form") == "token":
        pick = [n_out - 4 + i for i in range(4)] if n_out > 4 else None
        necks = [NeckSpec("select_indices", {"indices": pick})] if pick else []
        if decoder == "pyramid_fusion":
            necks += [NeckSpec("reshape_tokens_to_image"), NeckSpec("interpolate_to_pyramid")]
        elif decoder == "fcn":
            necks += [NeckSpec("reshape_tokens_to_image")]
        else:
            necks = [NeckSpec("select_indices", {"indices": [n_out - 1]})]
        return necks, img
    if decoder == "identity":
        return [NeckSpec("select_indices", {"indices": [3]})], img
    return [], img


def matrix_specs() -> list[tuple[str, ModelBuildSpec]]:
    combos = []
    for backbone in list_components("backbone"):
        for decoder in ("pyramid_fusion", "fcn"):
            for task in ("segmentation", "regression"):
                combos.append((backbone, decoder, task))
        combos.append((backbone, "identity", "classification"))
    out = []
    for backbone, decoder, task in combos:
        necks, img = _necks_for(backbone, decoder)
        spec = ModelBuildSpec(
            backbone=BackboneSpec(backbone, bands=list(HLS_BANDS)),
            necks=necks,
            decoder=DecoderSpec(decoder, {"channels": 16} if decoder != "identity" else {}),
            head=HeadSpec(task, None if task == "regression" else NUM_CLASSES),
            img_size=img,
        )
        out.append((f"{backbone}-{decoder}-{task}", spec))
    return out


def expected_shape(spec: ModelBuildSpec, batch: int) -> tuple:
    img = spec.img_size
    if spec.head.kind == "classification":
        return (batch, NUM_CLASSES)
    if spec.head.kind == "regression":
        return (batch, 1, img, img)
    return (batch, NUM_CLASSES, img, img)


def forward_backward(model, spec: ModelBuildSpec, batch: int = 2, seed: int = 0):
    """One training step's worth of forward and backward; returns (output, loss)."""
    g = torch.Generator().manual_seed(seed)
    img = spec.img_size
    x = torch.randn(batch, 1, len(HLS_BANDS), img, img, generator=g)
    model.train()
    out = model(x)
    if spec.head.kind == "regression":
        loss = F.mse_loss(out[:, 0], torch.randn(batch, img, img, generator=g))
    elif spec.head.kind == "classification":
        loss = F.cross_entropy(out, torch.randint(NUM_CLASSES, (batch,), generator=g))
    else:
        loss = F.cross_entropy(out, torch.randint(NUM_CLASSES, (batch, img, img), generator=g))
    loss.backward()
    return out, loss


def grads_finite(model) -> bool:
    grads = [p.grad for p in model.parameters() if p.requires_grad and p.grad is not None]
    return bool(grads) and all(torch.isfinite(g).all() for g in grads)


def loss_finite(loss) -> bool:
    return math.isfinite(float(loss.detach()))
