"""Synthetic raster fixtures used by the tests, scripts and example configs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import write_split_file
from .raster_io import write_raw_bsq

HLS_BANDS = ["B02", "B03", "B04", "B05", "B06", "B07"]
S2L1C_BANDS = ["B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B10", "B11", "B12"]


def blob_mask(rng: np.random.Generator, size: int, n_blobs: int, radius: tuple[float, float]) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
        ry, rx = rng.uniform(*radius, size=2)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    return mask


def blob_image(rng: np.random.Generator, mask: np.ndarray, n_bands: int, noise: float = 0.3) -> np.ndarray:
    size = mask.shape[0]
    # foreground signature differs in sign across bands, background has a smooth trend
    signature = np.where(np.arange(n_bands) % 2 == 0, 1.0, -0.7).astype(np.float32)
    base = rng.normal(0.0, 0.2, size=(n_bands, 1, 1)).astype(np.float32)
    ramp = np.linspace(-0.3, 0.3, size, dtype=np.float32)
    trend = ramp[None, :, None] * rng.uniform(-1, 1, size=(n_bands, 1, 1)).astype(np.float32)
    img = base + trend + signature[:, None, None] * mask[None].astype(np.float32)
    img += rng.normal(0.0, noise, size=img.shape).astype(np.float32)
    return img.astype(np.float32)


def make_blob_segmentation(
    root,
    n_images: int = 200,
    size: int = 64,
    bands: Sequence[str] = HLS_BANDS,
    seed: int = 0,
    num_frames: int = 1,
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    radius: tuple[float, float] | None = None,
    noise: float = 0.3,
) -> dict:
    """Write a 2-class blob segmentation dataset in RAW-BSQ form.

    Layout: ``images/<id>_img.bsq``, ``labels/<id>_mask.bsq`` and
    ``splits/{train,val,test}.txt``.  Returns the paths and split ids.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    radius = radius or (0.12 * size, 0.28 * size)
    ids = [f"s{i:04d}" for i in range(n_images)]
    for sid in ids:
        mask = blob_mask(rng, size, int(rng.integers(1, 4)), radius)
        frames = [blob_image(rng, mask, len(bands), noise) for _ in range(num_frames)]
        write_raw_bsq(root / "images" / f"{sid}_img.bsq", np.concatenate(frames, axis=0))
        write_raw_bsq(root / "labels" / f"{sid}_mask.bsq", mask.astype(np.int16)[None])

    n_train = int(round(split_fractions[0] * n_images))
    n_val = int(round(split_fractions[1] * n_images))
    splits = {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:],
    }
    (root / "splits").mkdir(parents=True, exist_ok=True)
    for name, split_ids in splits.items():
        write_split_file(root / "splits" / f"{name}.txt", split_ids)
    return {
        "root": root,
        "images_dir": root / "images",
        "labels_dir": root / "labels",
        "split_files": {k: root / "splits" / f"{k}.txt" for k in splits},
        "splits": splits,
        "bands": list(bands),
    }


def make_classification_tree(
    root,
    classes: Sequence[str] = ("forest", "water"),
    per_split: dict[str, int] | None = None,
    size: int = 32,
    bands: Sequence[str] = HLS_BANDS,
    seed: int = 0,
    skip: dict[str, Sequence[str]] | None = None,
) -> Path:
    """ImageFolder tree ``root/<split>/<class>/<n>.bsq``; class c has mean c."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    per_split = per_split or {"train": 4, "val": 2, "test": 2}
    skip = skip or {}
    for split, n in per_split.items():
        for ci, name in enumerate(classes):
            if name in skip.get(split, ()):
                continue
            (root / split / name).mkdir(parents=True, exist_ok=True)
            for k in range(n):
                img = rng.normal(float(ci), 0.3, size=(len(bands), size, size)).astype(np.float32)
                write_raw_bsq(root / split / name / f"{name}_{k:03d}.bsq", img)
    return root
