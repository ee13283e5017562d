"""PNG raster IO: 8-bit RGB images, 16-bit single-channel label/depth maps."""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError


def write_rgb(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise FormatError(f"RGB raster must be (H, W, 3) uint8, got {arr.shape} {arr.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


def read_rgb(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read raster {path}: {e}")
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.uint8)


def write_gray16(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise FormatError(f"16-bit raster must be 2-d, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 0xFFFF:
        raise FormatError(f"values out of uint16 range: [{arr.min()}, {arr.max()}]")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint16)).save(path)


def read_gray16(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read raster {path}: {e}")
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise FormatError(f"expected single-channel raster at {path}, got shape {arr.shape}")
    return arr.astype(np.int64)


def chw_to_hwc(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(arr, 0, -1))


def hwc_to_chw(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(arr, -1, 0))
