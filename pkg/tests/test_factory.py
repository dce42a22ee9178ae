import pytest
import torch

from build_matrix import NUM_CLASSES, expected_shape, forward_backward, grads_finite, loss_finite, matrix_specs
from rasterforge.backbones import ConvPyramid, ToyViT
from rasterforge.checkpoint import save_checkpoint
from rasterforge.factory import (
    BackboneSpec,
    CheckpointBandMismatch,
    DecoderSpec,
    HeadSpec,
    ModelBuildSpec,
    NeckSpec,
    ResolveError,
    ShapeIncompatibility,
    build_backbone,
    build_from_components,
    build_model,
)
from rasterforge.fixtures import HLS_BANDS, S2L1C_BANDS

MATRIX = matrix_specs()


def test_matrix_is_large_enough():
    assert len(MATRIX) >= 8


@pytest.mark.parametrize("name,spec", MATRIX, ids=[n for n, _ in MATRIX])
def test_build_matrix(name, spec):
    model = build_model(spec, rng_seed=0)
    out, loss = forward_backward(model, spec)
    assert tuple(out.shape) == expected_shape(spec, 2)
    assert loss_finite(loss) and grads_finite(model)


VIT_UPER = ModelBuildSpec(
    backbone=BackboneSpec("toy_toyvit", bands=list(HLS_BANDS)),
    necks=[
        NeckSpec("select_indices", {"indices": [2, 5, 8, 11]}),
        NeckSpec("reshape_tokens_to_image"),
        NeckSpec("interpolate_to_pyramid"),
    ],
    decoder=DecoderSpec("pyramid_fusion", {"channels": 32}),
    head=HeadSpec("segmentation", 2),
    img_size=224,
)


def test_vit_pyramid_segmentation_shape():
    model = build_model(VIT_UPER).eval()
    with torch.no_grad():
        assert model(torch.randn(1, 1, 6, 224, 224)).shape == (1, 2, 224, 224)


def test_vit_identity_classification():
    spec = ModelBuildSpec(
        backbone=BackboneSpec("toy_toyvit_tiny", bands=list(HLS_BANDS)),
        necks=[NeckSpec("select_indices", {"indices": [3]})],
        decoder=DecoderSpec("identity"),
        head=HeadSpec("classification", 7),
    )
    model = build_model(spec).eval()
    with torch.no_grad():
        assert model(torch.randn(2, 6, 64, 64)).shape == (2, 7)


def test_conv_fcn_regression():
    spec = ModelBuildSpec(
        backbone=BackboneSpec("toy_conv_pyramid", {"stage_channels": [8, 8, 16, 16]}, bands=list(HLS_BANDS)),
        decoder=DecoderSpec("fcn", {"channels": 8}),
        head=HeadSpec("regression"),
        img_size=96,
    )
    model = build_model(spec).eval()
    with torch.no_grad():
        assert model(torch.randn(2, 6, 96, 96)).shape == (2, 1, 96, 96)


def test_tokens_into_pyramid_without_necks_fail_at_build():
    spec = ModelBuildSpec(
        backbone=BackboneSpec("toy_toyvit_tiny", bands=list(HLS_BANDS)),
        decoder=DecoderSpec("pyramid_fusion"),
        head=HeadSpec("segmentation", 2),
    )
    with pytest.raises(ShapeIncompatibility) as err:
        build_model(spec)
    assert "token" in str(err.value)


def test_failing_stage_is_reported():
    spec = ModelBuildSpec(
        backbone=BackboneSpec("toy_toyvit_tiny", bands=list(HLS_BANDS)),
        necks=[NeckSpec("reshape_tokens_to_image", {"grid_hw": [4, 4]})],
        decoder=DecoderSpec("fcn"),
        head=HeadSpec("segmentation", 2),
    )
    with pytest.raises(ShapeIncompatibility) as err:
        build_model(spec)
    assert "neck[0]" in str(err.value)


def test_unknown_component_is_resolve_error():
    spec = ModelBuildSpec(backbone=BackboneSpec("toy_resnet", bands=["a"]))
    with pytest.raises(ResolveError):
        build_model(spec)
    spec = ModelBuildSpec(backbone=BackboneSpec(bands=["a"]), decoder=DecoderSpec("upernet"), head=HeadSpec("segmentation", 2))
    with pytest.raises(ResolveError):
        build_model(spec)


def test_build_is_deterministic_given_seed():
    a = build_model(VIT_UPER, rng_seed=5).state_dict()
    b = build_model(VIT_UPER, rng_seed=5).state_dict()
    c = build_model(VIT_UPER, rng_seed=6).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a)


def test_build_does_not_touch_global_rng():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    build_model(VIT_UPER)
    assert torch.equal(torch.rand(3), expected)


def test_build_from_components_matches_build_model():
    spec = MATRIX[0][1]
    reference = build_model(spec, rng_seed=3).eval()
    backbone = build_backbone(spec, rng_seed=3)
    wrapped = build_from_components(
        backbone, necks=spec.necks, decoder=spec.decoder, head=spec.head, img_size=spec.img_size, rng_seed=3
    ).eval()
    x = torch.randn(1, 6, spec.img_size, spec.img_size)
    with torch.no_grad():
        assert torch.equal(reference(x), wrapped(x))


def test_custom_backbone_without_grid_output_rejected():
    class TokensOnly(torch.nn.Module):
        in_bands = ["a"]

        def forward(self, x):
            return [torch.zeros(x.shape[0], 16, 8)]

    with pytest.raises(ShapeIncompatibility):
        build_from_components(TokensOnly(), decoder=DecoderSpec("pyramid_fusion"), img_size=32)


def test_freeze_backbone_keeps_weights_bitwise():
    spec = ModelBuildSpec(
        backbone=BackboneSpec("toy_conv_pyramid", {"stage_channels": [8, 8, 8, 8]}, bands=list(HLS_BANDS)),
        decoder=DecoderSpec("fcn", {"channels": 8}),
        head=HeadSpec("segmentation", NUM_CLASSES),
        freeze_backbone=True,
        img_size=64,
    )
    model = build_model(spec)
    before = {k: v.clone() for k, v in model.backbone.state_dict().items()}
    head_before = model.head.conv.weight.detach().clone()
    opt = torch.optim.AdamW([p for p in model.parameters() if p.requires_grad], lr=1e-2)
    for step in range(3):
        opt.zero_grad()
        forward_backward(model, spec, seed=step)
        opt.step()
    after = model.backbone.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)  # includes BN running stats
    assert not torch.equal(head_before, model.head.conv.weight)


# ---------------------------------------------------------------- pretrained loading


def _pretrained(tmp_path, bands, metadata=True):
    torch.manual_seed(0)
    src = ToyViT(bands, img_size=32, patch_size=8, embed_dim=16, depth=2, num_heads=2, out_indices=[1])
    meta = {"bands": list(bands)} if metadata else {}
    path = save_checkpoint(tmp_path / "pre.ckpt", {f"backbone.{k}": v for k, v in src.state_dict().items()}, meta)
    return src, path


def _vit_spec(bands, path):
    return ModelBuildSpec(
        backbone=BackboneSpec(
            "toy_toyvit",
            {"img_size": 32, "patch_size": 8, "embed_dim": 16, "depth": 2, "num_heads": 2, "out_indices": [1]},
            pretrained=str(path),
            bands=list(bands),
        ),
        decoder=DecoderSpec("identity"),
        head=HeadSpec("classification", 2),
    )


def test_pretrained_surgery_copies_matching_bands(tmp_path):
    src, path = _pretrained(tmp_path, HLS_BANDS)
    model = build_model(_vit_spec(S2L1C_BANDS, path))
    w_new = model.backbone.patch_embed.proj.weight
    w_old = src.patch_embed.proj.weight
    for j, band in enumerate(S2L1C_BANDS):
        if band in HLS_BANDS:
            assert torch.equal(w_new[:, j], w_old[:, HLS_BANDS.index(band)])
    assert torch.equal(model.backbone.blocks[1].mlp[0].weight, src.blocks[1].mlp[0].weight)


def test_pretrained_without_band_metadata_rejected(tmp_path):
    _, path = _pretrained(tmp_path, HLS_BANDS, metadata=False)
    with pytest.raises(CheckpointBandMismatch):
        build_model(_vit_spec(HLS_BANDS, path))


def test_multi_frame_conv_surgery_per_frame(tmp_path):
    torch.manual_seed(0)
    src = ConvPyramid(["a", "b"], stage_channels=(8, 8, 8, 8), num_frames=2)
    path = save_checkpoint(tmp_path / "c.ckpt", src.state_dict(), {"bands": ["a", "b"]})
    spec = ModelBuildSpec(
        backbone=BackboneSpec("toy_conv_pyramid", {"stage_channels": [8, 8, 8, 8], "num_frames": 2},
                              pretrained=str(path), bands=["b", "new", "a"]),
        decoder=DecoderSpec("fcn", {"channels": 8}),
        head=HeadSpec("segmentation", 2),
        img_size=32,
    )
    w = build_model(spec).backbone.stem[0].weight
    old = src.stem[0].weight
    # frame-major blocks: [b, new, a] per frame
    assert torch.equal(w[:, 0], old[:, 1]) and torch.equal(w[:, 2], old[:, 0])
    assert torch.equal(w[:, 3], old[:, 3]) and torch.equal(w[:, 5], old[:, 2])
