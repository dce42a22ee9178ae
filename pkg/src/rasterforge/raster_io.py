"""Raster readers and writers.

RAW-BSQ is the reference format: ``<name>.bsq`` holds band-sequential
little-endian values and ``<name>.bsq.json`` the header
``{"height", "width", "bands", "dtype", "order": "bsq"}``.  Multi-band TIFF
goes through ``tifffile`` when it is installed.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

RAW_SUFFIX = ".bsq"
TIFF_SUFFIXES = (".tif", ".tiff")
_DTYPES = {"float32": "<f4", "int16": "<i2"}

try:
    import tifffile
except ImportError:  # pragma: no cover - optional
    tifffile = None


class RasterFormatError(ValueError):
    pass


def tiff_available() -> bool:
    return tifffile is not None


def header_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_raw_bsq(path: str | os.PathLike, array: np.ndarray) -> Path:
    """Write a ``(bands, H, W)`` or ``(H, W)`` array."""
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise RasterFormatError(f"expected (bands, H, W), got shape {array.shape}")
    dtype = array.dtype.name
    if dtype not in _DTYPES:
        raise RasterFormatError(f"unsupported dtype {dtype}; use float32 or int16")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bands, height, width = array.shape
    header = {"height": height, "width": width, "bands": bands, "dtype": dtype, "order": "bsq"}
    header_path(path).write_text(json.dumps(header))
    path.write_bytes(np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes())
    return path


def read_raw_bsq(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    try:
        header = json.loads(header_path(path).read_text())
    except FileNotFoundError:
        raise RasterFormatError(f"missing header sidecar for {path}") from None
    if header.get("order", "bsq") != "bsq" or header.get("dtype") not in _DTYPES:
        raise RasterFormatError(f"unsupported header in {header_path(path)}: {header}")
    shape = (header["bands"], header["height"], header["width"])
    data = np.frombuffer(path.read_bytes(), dtype=_DTYPES[header["dtype"]])
    if data.size != np.prod(shape):
        raise RasterFormatError(f"{path}: {data.size} values for header shape {shape}")
    return data.reshape(shape).astype(header["dtype"])


def write_tiff(path: str | os.PathLike, array: np.ndarray) -> Path:
    if tifffile is None:
        raise ImportError("tifffile is required for TIFF output")
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[None]
    tifffile.imwrite(path, array, photometric="minisblack", planarconfig="separate")
    return Path(path)


def read_tiff(path: str | os.PathLike) -> np.ndarray:
    if tifffile is None:
        raise ImportError("tifffile is required to read TIFF rasters")
    arr = tifffile.imread(path)
    if arr.ndim == 2:
        arr = arr[None]
    elif arr.ndim == 3 and arr.shape[-1] < arr.shape[0] and arr.shape[-1] <= 32:
        # pixel-interleaved (H, W, bands)
        arr = np.moveaxis(arr, -1, 0)
    return arr


def read_raster(path: str | os.PathLike) -> np.ndarray:
    """Read any supported raster as ``(bands, H, W)``."""
    suffix = Path(path).suffix.lower()
    if suffix == RAW_SUFFIX:
        return read_raw_bsq(path)
    if suffix in TIFF_SUFFIXES:
        return read_tiff(path)
    raise RasterFormatError(f"unsupported raster file {path}")


def write_raster(path: str | os.PathLike, array: np.ndarray) -> Path:
    suffix = Path(path).suffix.lower()
    if suffix == RAW_SUFFIX:
        return write_raw_bsq(path, array)
    if suffix in TIFF_SUFFIXES:
        return write_tiff(path, array)
    raise RasterFormatError(f"unsupported raster file {path}")


def is_raster(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in (RAW_SUFFIX, *TIFF_SUFFIXES)
