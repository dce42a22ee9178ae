"""Config-driven fine-tuning toolkit for raster deep learning."""

__version__ = "0.1.0"

# importing these modules fills the component registries
from . import backbones, decoders, necks  # noqa: E402,F401
from .registry import (  # noqa: E402
    BACKBONE_REGISTRY,
    DECODER_REGISTRY,
    HEAD_REGISTRY,
    NECK_REGISTRY,
    list_components,
)
from .factory import ModelBuildSpec, build_from_components, build_model  # noqa: E402

__all__ = [
    "BACKBONE_REGISTRY",
    "DECODER_REGISTRY",
    "HEAD_REGISTRY",
    "NECK_REGISTRY",
    "ModelBuildSpec",
    "build_from_components",
    "build_model",
    "list_components",
]
