import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from rasterforge.backbones import ConvPyramid, DuplicateBand, EmptyTargetBands, ToyViT, remap_patch_embedding
from rasterforge.features import ShapeMismatch
from rasterforge.fixtures import HLS_BANDS, S2L1C_BANDS


def small_vit(**kw):
    cfg = dict(in_bands=HLS_BANDS, img_size=32, patch_size=8, embed_dim=16, depth=4, num_heads=2, out_indices=[1, 3])
    cfg.update(kw)
    return ToyViT(**cfg)


def test_vit_default_geometry():
    torch.manual_seed(0)
    vit = ToyViT(HLS_BANDS, img_size=224, patch_size=16, embed_dim=64, depth=12, num_heads=4, out_indices=[2, 5, 8, 11])
    out = vit(torch.randn(2, 1, 6, 224, 224))
    assert [tuple(o.shape) for o in out] == [(2, 196, 64)] * 4


def test_vit_two_frames_double_tokens():
    vit = ToyViT(HLS_BANDS, img_size=224, patch_size=16, num_frames=2, embed_dim=64, depth=3, num_heads=4, out_indices=[2])
    (out,) = vit(torch.randn(2, 2, 6, 224, 224))
    assert out.shape == (2, 392, 64)


@given(
    patch=st.sampled_from([4, 8]),
    grid=st.integers(1, 4),
    frames=st.integers(1, 3),
    bands=st.integers(1, 4),
)
def test_token_count_law(patch, grid, frames, bands):
    img = patch * grid
    vit = ToyViT([f"b{i}" for i in range(bands)], img_size=img, patch_size=patch, num_frames=frames,
                 embed_dim=8, depth=1, num_heads=2, out_indices=[0])
    (out,) = vit(torch.zeros(1, frames, bands, img, img))
    assert out.shape[1] == frames * (img // patch) ** 2


def test_vit_four_dim_input_means_one_frame():
    vit = small_vit()
    x = torch.randn(1, 6, 32, 32)
    vit.eval()
    assert torch.equal(vit(x)[0], vit(x[:, None])[0])


@pytest.mark.parametrize("shape", [(1, 1, 5, 32, 32), (1, 2, 6, 32, 32), (1, 1, 6, 40, 40)])
def test_vit_rejects_bad_shapes(shape):
    with pytest.raises(ShapeMismatch):
        small_vit()(torch.zeros(shape))


def test_vit_config_validation():
    with pytest.raises(ValueError):
        small_vit(img_size=30)
    with pytest.raises(ValueError):
        small_vit(embed_dim=15)
    with pytest.raises(ValueError):
        small_vit(out_indices=[4])


def test_vit_outputs_in_ascending_block_order():
    vit = small_vit(out_indices=[3, 1])
    assert vit.out_indices == [1, 3]


def test_vit_gradients_reach_every_used_block():
    torch.manual_seed(0)
    vit = small_vit(out_indices=[0, 2])
    out = vit(torch.randn(2, 1, 6, 32, 32))
    sum(o.pow(2).mean() for o in out).backward()
    for i in range(3):
        norm = sum(p.grad.norm() for p in vit.blocks[i].parameters() if p.grad is not None)
        assert norm > 0, f"block {i} received no gradient"
    # blocks past the last output index are never run
    assert all(p.grad is None for p in vit.blocks[3].parameters())


def test_vit_gradient_matches_finite_differences():
    torch.manual_seed(0)
    vit = small_vit(embed_dim=8, depth=2, out_indices=[0, 1]).double()
    x = torch.randn(1, 1, 6, 32, 32, dtype=torch.float64)

    def loss_fn():
        return sum((o ** 2).mean() for o in vit(x))

    loss_fn().backward()
    rng = np.random.default_rng(0)
    params = [p for p in vit.parameters() if p.requires_grad]
    checked = 0
    while checked < 3:
        p = params[rng.integers(len(params))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        g = float(p.grad[idx])
        if abs(g) < 1e-6:
            continue
        h = 1e-6
        with torch.no_grad():
            orig = float(p[idx])
            p[idx] = orig + h
            up = float(loss_fn())
            p[idx] = orig - h
            down = float(loss_fn())
            p[idx] = orig
        fd = (up - down) / (2 * h)
        assert abs(fd - g) / abs(g) < 1e-2
        checked += 1


def test_conv_pyramid_stride_arithmetic():
    net = ConvPyramid(HLS_BANDS, stage_channels=(32, 64, 128, 256))
    feats = net(torch.randn(2, 6, 64, 64))
    assert [tuple(f.shape) for f in feats] == [(2, 32, 16, 16), (2, 64, 8, 8), (2, 128, 4, 4), (2, 256, 2, 2)]
    assert net.feature_info.reductions == (4.0, 8.0, 16.0, 32.0)


def test_conv_pyramid_single_band():
    net = ConvPyramid(["only"], stage_channels=(8, 8, 8, 8))
    assert len(net(torch.randn(1, 1, 64, 64))) == 4


def test_conv_pyramid_frames_fold_into_channels():
    net = ConvPyramid(HLS_BANDS, stage_channels=(8, 8, 8, 8), num_frames=3)
    assert net.stem[0].in_channels == 18
    assert net(torch.randn(1, 3, 6, 64, 64))[0].shape == (1, 8, 16, 16)


def test_conv_pyramid_requires_multiples_of_32():
    with pytest.raises(ShapeMismatch):
        ConvPyramid(HLS_BANDS)(torch.randn(1, 6, 48, 48))


def test_conv_pyramid_deterministic_in_eval():
    net = ConvPyramid(HLS_BANDS, stage_channels=(8, 16, 16, 16)).eval()
    x = torch.randn(2, 6, 64, 64)
    with torch.no_grad():
        a, b = net(x), net(x)
    assert all(torch.equal(u, v) for u, v in zip(a, b))


def test_init_is_truncated_normal_with_zero_bias():
    torch.manual_seed(0)
    vit = small_vit(embed_dim=64, num_heads=4)
    w = vit.blocks[0].mlp[0].weight.detach()
    # a normal truncated at 2 sigma keeps about 88% of the std
    assert abs(float(w.std()) - 0.88 * 0.02) < 0.002
    assert float(w.abs().max()) <= 0.04 + 1e-6
    assert torch.count_nonzero(vit.patch_embed.proj.bias) == 0


# ---------------------------------------------------------------- channel surgery


def weight(d=16, c=6, p=4, seed=0):
    return np.random.default_rng(seed).normal(0, 0.05, size=(d, c, p, p)).astype(np.float32)


def test_identity_remap_is_bitwise_copy():
    w = weight()
    out = remap_patch_embedding(w, HLS_BANDS, HLS_BANDS)
    assert np.array_equal(out, w) and out is not w


def test_hls_to_s2_copies_matching_and_inits_the_rest():
    w = weight(d=64, p=16)
    out = remap_patch_embedding(w, HLS_BANDS, S2L1C_BANDS, rng_seed=3)
    assert out.shape == (64, 13, 16, 16)
    for j, band in enumerate(S2L1C_BANDS):
        if band in HLS_BANDS:
            assert np.array_equal(out[:, j], w[:, HLS_BANDS.index(band)])
    new = [j for j, b in enumerate(S2L1C_BANDS) if b not in HLS_BANDS]
    assert len(new) == 7
    assert abs(out[:, new].std() / w.std() - 1) < 0.1
    assert abs(out[:, new].mean()) < 0.01


def test_disjoint_bands_use_default_std():
    w = weight(d=64, c=3, p=8)
    out = remap_patch_embedding(w, ["x", "y", "z"], ["p", "q", "r"])
    assert out.size >= 10_000
    assert abs(out.std() / 0.02 - 1) < 0.1


def test_remap_accepts_tensors():
    w = torch.from_numpy(weight())
    out = remap_patch_embedding(w, HLS_BANDS, list(reversed(HLS_BANDS)))
    assert isinstance(out, torch.Tensor)
    assert torch.equal(out, w.flip(1))


def test_remap_errors():
    w = weight()
    with pytest.raises(DuplicateBand):
        remap_patch_embedding(w, HLS_BANDS, ["B02", "B02"])
    with pytest.raises(EmptyTargetBands):
        remap_patch_embedding(w, HLS_BANDS, [])
    with pytest.raises(ShapeMismatch):
        remap_patch_embedding(w, HLS_BANDS[:5], HLS_BANDS)


band_lists = st.lists(st.sampled_from(S2L1C_BANDS + ["X1", "X2"]), min_size=1, max_size=10, unique=True)


@given(target=band_lists, seed=st.integers(0, 1000))
def test_remap_idempotent(target, seed):
    w = weight()
    once = remap_patch_embedding(w, HLS_BANDS, target, seed)
    assert np.array_equal(remap_patch_embedding(once, target, target, seed), once)


@given(target=band_lists, perm_seed=st.integers(0, 1000), seed=st.integers(0, 1000))
def test_remap_permutation_equivariant(target, perm_seed, seed):
    w = weight()
    perm = np.random.default_rng(perm_seed).permutation(len(target))
    permuted = [target[i] for i in perm]
    base = remap_patch_embedding(w, HLS_BANDS, target, seed)
    out = remap_patch_embedding(w, HLS_BANDS, permuted, seed)
    assert np.array_equal(out, base[:, perm])


@given(target=band_lists, seed=st.integers(0, 1000))
def test_remap_deterministic(target, seed):
    w = weight()
    assert np.array_equal(remap_patch_embedding(w, HLS_BANDS, target, seed),
                          remap_patch_embedding(w, HLS_BANDS, target, seed))
