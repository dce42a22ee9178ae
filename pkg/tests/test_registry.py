import pytest
import torch

from rasterforge.registry import (
    BACKBONE_REGISTRY,
    DECODER_REGISTRY,
    AmbiguousNamespace,
    DuplicateName,
    InvalidName,
    NotFound,
    Registry,
    RegistryError,
    RegistrySet,
    list_components,
)
from rasterforge.backbones import ToyViT
from rasterforge.decoders import FCNDecoder


def make_set():
    return RegistrySet("backbone", [Registry("backbone", namespace="toy"), Registry("backbone")])


def test_register_and_resolve_roundtrip():
    reg = make_set()
    reg.namespace("toy").register("toyvit", ToyViT, defaults=dict(img_size=32, patch_size=8, depth=2, out_indices=[1]))
    model = reg.build("toy_toyvit", in_bands=["a", "b"])
    assert isinstance(model, ToyViT)


def test_duplicate_name_rejected():
    reg = Registry("backbone")
    reg.register("toyvit", ToyViT)
    with pytest.raises(DuplicateName):
        reg.register("toyvit", ToyViT)


@pytest.mark.parametrize("name", ["", "toy_thing"])
def test_invalid_names(name):
    reg = make_set()
    with pytest.raises(InvalidName):
        reg.registries[1].register(name, ToyViT)


def test_decorator_registration():
    reg = Registry("head")

    @reg.register("mine", defaults={"k": 3})
    def build(k):
        return {"k": k}

    assert reg.resolve("mine").build() == {"k": 3}
    assert reg.resolve("mine").build(k=5) == {"k": 5}


def test_frozen_registry_refuses_registration():
    reg = Registry("neck")
    reg.freeze()
    with pytest.raises(RegistryError):
        reg.register("x", dict)


def test_prefixed_and_bare_lookup_give_same_builder():
    spec_a = BACKBONE_REGISTRY.resolve("toy_toyvit_tiny")
    spec_b = BACKBONE_REGISTRY.namespace("toy").resolve("toyvit_tiny")
    assert spec_a is spec_b
    a = spec_a.build(in_bands=["x"] * 1)
    b = spec_b.build(in_bands=["x"] * 1)
    assert [p.shape for p in a.parameters()] == [p.shape for p in b.parameters()]


def test_namespaced_lookup_never_falls_through():
    reg = make_set()
    reg.registries[1].register("vit", dict)
    with pytest.raises(NotFound):
        reg.resolve("toy_vit")
    assert reg.resolve("vit").builder is dict


def test_bare_lookup_searches_in_priority_order():
    first, second = Registry("decoder"), Registry("decoder")
    first.register("shared", list)
    second.register("shared", dict)
    reg = RegistrySet("decoder", [first, second])
    assert reg.resolve("shared").builder is list


def test_resolve_builtin_decoder():
    assert DECODER_REGISTRY.resolve("fcn").builder is FCNDecoder


def test_not_found_lists_suggestions():
    with pytest.raises(NotFound) as err:
        DECODER_REGISTRY.resolve("pyramid_fuson")
    assert "pyramid_fusion" in err.value.suggestions
    assert "pyramid_fusion" in str(err.value)


def test_not_found_is_key_error():
    with pytest.raises(KeyError):
        DECODER_REGISTRY.resolve("nonexistent")


def test_ambiguous_namespace():
    reg = RegistrySet("backbone", [Registry("backbone", namespace="toy"), Registry("backbone", namespace="toy")])
    with pytest.raises(AmbiguousNamespace):
        reg.resolve("toy_x")


def test_listing_sorted_and_complete():
    reg = Registry("neck")
    names = ["zeta", "alpha", "mid", "beta"]
    for n in names:
        reg.register(n, dict)
    assert reg.names() == sorted(names)
    assert len(reg) == 4
    assert list_components("backbone") == ["toy_conv_pyramid", "toy_toyvit", "toy_toyvit_tiny"]
    everything = list_components()
    assert everything == sorted(everything)
    assert {"fcn", "identity", "pyramid_fusion", "segmentation", "select_indices"} <= set(everything)


def test_resolved_instances_are_independent():
    spec = BACKBONE_REGISTRY.resolve("toy_conv_pyramid")
    a = spec.build(in_bands=["a"])
    b = spec.build(in_bands=["a"])
    with torch.no_grad():
        next(a.parameters()).add_(1.0)
    assert not torch.equal(next(a.parameters()), next(b.parameters()))


def test_default_arguments_not_shared_between_builds():
    reg = Registry("neck")
    reg.register("lst", lambda items: items, defaults={"items": [1, 2]})
    first = reg.resolve("lst").build()
    first.append(3)
    assert reg.resolve("lst").build() == [1, 2]
