import os

import pytest
import torch
from hypothesis import HealthCheck, settings

from rasterforge.fixtures import HLS_BANDS, make_blob_segmentation

torch.set_num_threads(1)

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def blob_config_dict(info, size=64, max_epochs=30, patience=10, stage_channels=(16, 32, 64, 128),
                     channels=32, lr=1e-3, artifacts_dir="runs/test", augment=True):
    """Run-config mapping for a blob fixture written by ``make_blob_segmentation``."""
    return {
        "task": {"kind": "segmentation", "num_classes": 2},
        "model": {
            "backbone": {"name": "toy_conv_pyramid", "args": {"stage_channels": list(stage_channels)}},
            "decoder": {"name": "pyramid_fusion", "args": {"channels": channels}},
            "head": {"kind": "segmentation"},
            "img_size": size,
        },
        "data": {
            "images_dir": str(info["images_dir"]),
            "labels_dir": str(info["labels_dir"]),
            "image_grep": "*_img.bsq",
            "label_grep": "*_mask.bsq",
            "split_files": {k: str(v) for k, v in info["split_files"].items()},
            "dataset_bands": list(HLS_BANDS),
            "augment": {"hflip": augment, "vflip": augment, "rot90": augment},
            "batch_size": 16,
        },
        "optimizer": {"lr": lr, "weight_decay": 0.05},
        "trainer": {"max_epochs": max_epochs, "early_stop_patience": patience, "seed": 0,
                    "artifacts_dir": str(artifacts_dir)},
    }


@pytest.fixture(scope="session")
def small_blobs(tmp_path_factory):
    """40 images of 32x32: fast enough for end-to-end plumbing tests."""
    root = tmp_path_factory.mktemp("small_blobs")
    return make_blob_segmentation(root, n_images=40, size=32, seed=1)


@pytest.fixture(scope="session")
def blob_fixture(tmp_path_factory):
    """The full 200-image 64x64 six-band fixture."""
    root = tmp_path_factory.mktemp("blobs")
    return make_blob_segmentation(root, n_images=200, size=64, seed=0)
