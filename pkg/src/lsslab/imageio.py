"""Grayscale PNG/PGM reading and mask writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import LoadError
from .imaging import normalize_intensity


def read_gray(path) -> np.ndarray:
    """Load an 8- or 16-bit grayscale image as float64 in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L"):
                raw = np.array(im, dtype=np.uint16)
            elif im.mode == "I":
                raw = np.array(im).astype(np.uint16)
            else:
                raw = np.array(im.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise LoadError(f"cannot decode image {path}: {exc}") from None
    return normalize_intensity(raw)


def write_gray(img, path) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def read_mask(path) -> np.ndarray:
    return read_gray(path) > 0.5


def write_mask(mask, path) -> None:
    Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, mode="L").save(path)


def resize_image(img, size: int) -> np.ndarray:
    if img.shape == (size, size):
        return img
    pil = Image.fromarray(img.astype(np.float32), mode="F").resize((size, size), Image.BILINEAR)
    return np.clip(np.asarray(pil, dtype=np.float64), 0.0, 1.0)


def resize_mask(mask, size: int) -> np.ndarray:
    if mask.shape == (size, size):
        return mask
    pil = Image.fromarray(mask.astype(np.uint8) * 255, mode="L").resize((size, size), Image.NEAREST)
    return np.asarray(pil) > 127
