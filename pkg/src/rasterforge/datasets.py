"""Generic raster datasets.

Two layouts are supported without writing any dataset code:

* classification in ImageFolder form, ``root/<split>/<class>/<file>``;
* pixel-wise tasks where images and labels are found by one-wildcard grep
  patterns (``"*_img.bsq"``) and paired by the wildcard-matched id, with
  splits given either as sub-folders or as split files of ids.

Multi-temporal samples are stored as ``T * len(dataset_bands)`` bands in one
file, frame-major, and unstacked to ``(T, C, H, W)`` on load.
"""

from __future__ import annotations

import fnmatch
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .raster_io import is_raster, read_raster

SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


class MissingSplit(DatasetError):
    pass


class ClassMismatchAcrossSplits(DatasetError):
    pass


class UnpairedImage(DatasetError):
    def __init__(self, ids: list[str]):
        self.ids = ids
        super().__init__(f"no label found for image id(s): {', '.join(ids)}")


class DuplicateId(DatasetError):
    pass


class GrepPatternError(DatasetError):
    pass


class BandCountIndivisible(DatasetError):
    pass


class UnknownOutputBand(DatasetError):
    pass


class InvalidMaskValue(DatasetError):
    pass


class EmptyClassWarning(UserWarning):
    pass


@dataclass
class AugmentFlags:
    hflip: bool = False
    vflip: bool = False
    rot90: bool = False


@dataclass
class DataConfig:
    kind: str = "pixelwise"
    root: str | None = None
    images_dir: str | None = None
    labels_dir: str | None = None
    image_grep: str = "*"
    label_grep: str = "*"
    split_files: dict[str, str] = field(default_factory=dict)
    dataset_bands: list[str] = field(default_factory=list)
    output_bands: list[str] | None = None
    num_frames: int | None = None
    means: list[float] | None = None
    stds: list[float] | None = None
    augment: AugmentFlags = field(default_factory=AugmentFlags)
    ignore_index: int = -1
    num_classes: int | None = None
    batch_size: int = 16
    num_workers: int = 0

    @property
    def bands_out(self) -> list[str]:
        return list(self.output_bands) if self.output_bands is not None else list(self.dataset_bands)


@dataclass
class RasterSample:
    image: np.ndarray
    label: Any = None
    bands: list[str] = field(default_factory=list)
    id: str = ""


# ---------------------------------------------------------------- indexing


def index_classification_folder(root, split: str = "train") -> tuple[list[tuple[Path, int]], list[str]]:
    """Index one split of an ImageFolder tree.

    The class list is the sorted union of class folders in ``train`` and
    ``val``, so every split shares one mapping.  A ``test`` (or any other)
    split holding a class unseen in training raises
    :class:`ClassMismatchAcrossSplits`.
    """
    root = Path(root)
    missing = [s for s in SPLITS if not (root / s).is_dir()]
    if missing:
        raise MissingSplit(f"{root} has no split folder(s): {', '.join(missing)}")

    def classes_in(split_dir: Path) -> list[str]:
        return sorted(p.name for p in split_dir.iterdir() if p.is_dir())

    class_names = sorted(set(classes_in(root / "train")) | set(classes_in(root / "val")))
    if not class_names:
        raise MissingSplit(f"{root / 'train'} has no class folders")
    split_dir = root / split
    if not split_dir.is_dir():
        raise MissingSplit(f"{split_dir} does not exist")
    unknown = sorted(set(classes_in(split_dir)) - set(class_names))
    if unknown:
        raise ClassMismatchAcrossSplits(f"split {split!r} has classes unseen in training: {unknown}")

    samples: list[tuple[Path, int]] = []
    for idx, name in enumerate(class_names):
        cdir = split_dir / name
        files = sorted(p for p in cdir.iterdir() if is_raster(p)) if cdir.is_dir() else []
        if not files and cdir.is_dir():
            warnings.warn(f"class folder {cdir} is empty", EmptyClassWarning, stacklevel=2)
        samples.extend((f, idx) for f in files)
    return samples, class_names


def _split_pattern(pattern: str) -> tuple[str, str]:
    if pattern.count("*") != 1:
        raise GrepPatternError(f"grep pattern must contain exactly one '*': {pattern!r}")
    prefix, suffix = pattern.split("*")
    return prefix, suffix


def grep_ids(directory, pattern: str) -> dict[str, Path]:
    """Map id -> file for every raster under ``directory`` matching ``pattern``."""
    prefix, suffix = _split_pattern(pattern)
    found: dict[str, Path] = {}
    for path in sorted(Path(directory).rglob("*")):
        name = path.name
        if not is_raster(path) or not fnmatch.fnmatchcase(name, pattern):
            continue
        if len(name) < len(prefix) + len(suffix):
            continue
        sample_id = name[len(prefix): len(name) - len(suffix)]
        if sample_id in found:
            raise DuplicateId(f"id {sample_id!r} matches both {found[sample_id]} and {path}")
        found[sample_id] = path
    return found


def read_split_file(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def write_split_file(path, ids: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in ids))


def pair_pixelwise(cfg: DataConfig, split: str) -> list[tuple[str, Path, Path]]:
    """Return ``(id, image_path, label_path)`` triples sorted by id."""
    if cfg.images_dir is None:
        raise DatasetError("images_dir is not set")
    images_dir = Path(cfg.images_dir)
    labels_dir = Path(cfg.labels_dir) if cfg.labels_dir is not None else images_dir
    wanted: list[str] | None = None
    if split in cfg.split_files:
        wanted = read_split_file(cfg.split_files[split])
    elif (images_dir / split).is_dir():
        images_dir = images_dir / split
        if (labels_dir / split).is_dir():
            labels_dir = labels_dir / split
    else:
        raise MissingSplit(f"split {split!r}: no split file and no folder {images_dir / split}")

    images = grep_ids(images_dir, cfg.image_grep)
    labels = grep_ids(labels_dir, cfg.label_grep)
    if wanted is not None:
        absent = [i for i in wanted if i not in images]
        if absent:
            raise DatasetError(f"split file for {split!r} lists unknown id(s): {absent}")
        images = {i: images[i] for i in wanted}
    if not images:
        raise DatasetError(f"no images match {cfg.image_grep!r} for split {split!r}")
    unpaired = sorted(i for i in images if i not in labels)
    if unpaired:
        raise UnpairedImage(unpaired)
    return [(i, images[i], labels[i]) for i in sorted(images)]


# ---------------------------------------------------------------- loading


def unstack_frames(raw: np.ndarray, n_bands: int) -> np.ndarray:
    """``(T * C, H, W)`` frame-major -> ``(T, C, H, W)``."""
    if raw.shape[0] % n_bands:
        raise BandCountIndivisible(
            f"{raw.shape[0]} stored bands are not a multiple of {n_bands} dataset bands"
        )
    return raw.reshape(raw.shape[0] // n_bands, n_bands, *raw.shape[1:])


def stack_frames(image: np.ndarray) -> np.ndarray:
    T, C = image.shape[:2]
    return image.reshape(T * C, *image.shape[2:])


def band_indices(cfg: DataConfig) -> list[int]:
    pos = {b: i for i, b in enumerate(cfg.dataset_bands)}
    unknown = [b for b in cfg.bands_out if b not in pos]
    if unknown:
        raise UnknownOutputBand(f"output bands {unknown} are not in dataset_bands {cfg.dataset_bands}")
    return [pos[b] for b in cfg.bands_out]


def load_image(image_path, cfg: DataConfig) -> np.ndarray:
    if not cfg.dataset_bands:
        raise DatasetError("dataset_bands is empty")
    raw = read_raster(image_path).astype(np.float32)
    image = unstack_frames(raw, len(cfg.dataset_bands))
    if cfg.num_frames is not None and image.shape[0] != cfg.num_frames:
        raise BandCountIndivisible(
            f"{image_path}: {raw.shape[0]} bands give {image.shape[0]} frame(s), expected {cfg.num_frames}"
        )
    idx = band_indices(cfg)
    image = image[:, idx]
    if cfg.means is not None:
        mean = np.asarray(cfg.means, dtype=np.float32)[idx]
        std = np.asarray(cfg.stds, dtype=np.float32)[idx] if cfg.stds is not None else np.ones_like(mean)
        image = (image - mean[None, :, None, None]) / std[None, :, None, None]
    return np.ascontiguousarray(image, dtype=np.float32)


def load_label(label_path, cfg: DataConfig, task_kind: str = "segmentation") -> np.ndarray:
    raw = read_raster(label_path)
    if task_kind == "regression":
        return raw[0].astype(np.float32)
    mask = raw[0].astype(np.int64)
    if cfg.num_classes is not None:
        bad = (mask != cfg.ignore_index) & ((mask < 0) | (mask >= cfg.num_classes))
        if bad.any():
            vals = sorted(set(mask[bad].tolist()))[:5]
            raise InvalidMaskValue(f"{label_path}: mask values {vals} outside [0, {cfg.num_classes})")
    return mask


def load_sample(image_path, cfg: DataConfig, label_path=None, sample_id: str | None = None,
                task_kind: str = "segmentation") -> RasterSample:
    image = load_image(image_path, cfg)
    label = load_label(label_path, cfg, task_kind) if label_path is not None else None
    return RasterSample(image, label, cfg.bands_out, sample_id or Path(image_path).stem)


def augment(sample: RasterSample, flags: AugmentFlags, rng: np.random.Generator) -> RasterSample:
    """Random flips and quarter turns applied identically to image and mask.

    Rotations by 90/270 degrees are skipped for non-square images so batch
    shapes stay fixed.
    """
    image, label = sample.image, sample.label
    pixel_label = isinstance(label, np.ndarray) and label.ndim == 2

    def apply(fn):
        nonlocal image, label
        image = fn(image)
        if pixel_label:
            label = fn(label)

    if flags.hflip and rng.random() < 0.5:
        apply(lambda a: np.flip(a, axis=-1))
    if flags.vflip and rng.random() < 0.5:
        apply(lambda a: np.flip(a, axis=-2))
    if flags.rot90:
        k = int(rng.integers(4))
        if image.shape[-1] != image.shape[-2]:
            k = k & 2
        if k:
            apply(lambda a: np.rot90(a, k, axes=(-2, -1)))
    image = np.ascontiguousarray(image)
    if pixel_label:
        label = np.ascontiguousarray(label)
    return RasterSample(image, label, sample.bands, sample.id)


# ---------------------------------------------------------------- torch datasets


class _RasterDataset(Dataset):
    def __init__(self, cfg: DataConfig, items, task_kind: str, train: bool, seed: int):
        self.cfg = cfg
        self.items = items
        self.task_kind = task_kind
        self.train = train
        self.seed = seed
        self.epoch = 0
        self._cache: dict[int, RasterSample] = {}

    def __len__(self) -> int:
        return len(self.items)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def _load(self, i: int) -> RasterSample:
        raise NotImplementedError

    def sample(self, i: int) -> RasterSample:
        if i not in self._cache:
            self._cache[i] = self._load(i)
        s = self._cache[i]
        if self.train:
            # one stream per (seed, epoch, index): independent of worker layout
            rng = np.random.default_rng([self.seed, self.epoch, i])
            s = augment(s, self.cfg.augment, rng)
        return s

    def __getitem__(self, i: int) -> dict[str, Any]:
        s = self.sample(i)
        label = s.label
        if isinstance(label, np.ndarray):
            label = torch.from_numpy(label.copy())
        else:
            label = torch.tensor(label, dtype=torch.long)
        return {"image": torch.from_numpy(s.image.copy()), "label": label, "id": s.id}


class PixelwiseDataset(_RasterDataset):
    def __init__(self, cfg: DataConfig, split: str, task_kind: str = "segmentation",
                 train: bool = False, seed: int = 0):
        super().__init__(cfg, pair_pixelwise(cfg, split), task_kind, train, seed)

    def _load(self, i: int) -> RasterSample:
        sample_id, img, lbl = self.items[i]
        return load_sample(img, self.cfg, lbl, sample_id, self.task_kind)


class ClassificationDataset(_RasterDataset):
    def __init__(self, cfg: DataConfig, split: str, task_kind: str = "classification",
                 train: bool = False, seed: int = 0):
        if cfg.root is None:
            raise DatasetError("classification data needs `root`")
        items, self.class_names = index_classification_folder(cfg.root, split)
        super().__init__(cfg, items, task_kind, train, seed)

    def _load(self, i: int) -> RasterSample:
        path, idx = self.items[i]
        return RasterSample(load_image(path, self.cfg), idx, self.cfg.bands_out, path.stem)


class RasterDataModule:
    """Builds per-split datasets and seeded, per-epoch shuffled loaders."""

    def __init__(self, cfg: DataConfig, task_kind: str = "segmentation", seed: int = 0):
        self.cfg = cfg
        self.task_kind = task_kind
        self.seed = seed
        self._datasets: dict[str, _RasterDataset] = {}

    def dataset(self, split: str) -> _RasterDataset:
        if split not in self._datasets:
            cls = ClassificationDataset if self.cfg.kind == "classification" else PixelwiseDataset
            self._datasets[split] = cls(self.cfg, split, self.task_kind, train=split == "train", seed=self.seed)
        return self._datasets[split]

    def has_split(self, split: str) -> bool:
        try:
            self.dataset(split)
        except MissingSplit:
            return False
        return True

    def loader(self, split: str, epoch: int = 0) -> DataLoader:
        ds = self.dataset(split)
        ds.set_epoch(epoch)
        shuffle = split == "train"
        gen = torch.Generator().manual_seed(self.seed * 100003 + epoch) if shuffle else None
        return DataLoader(
            ds,
            batch_size=self.cfg.batch_size,
            shuffle=shuffle,
            generator=gen,
            num_workers=self.cfg.num_workers,
        )
