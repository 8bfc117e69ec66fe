"""PNG (RGB or grayscale, 8-bit) and PGM image reading and writing."""

from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image

from .errors import ContractViolation
from .models import ImageTensor


SUPPORTED_SUFFIXES = (".png", ".pgm")


def load_image(path: Path | str, value_range: Tuple[float, float] = (0.0, 1.0)) -> ImageTensor:
    """Read an 8-bit grayscale or RGB image into the given value range."""
    p = Path(path)
    if p.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ContractViolation(f"unsupported image format: {p.suffix}")
    with Image.open(p) as im:
        if im.mode not in ("L", "RGB"):
            raise ContractViolation(f"{p}: unsupported pixel mode {im.mode}")
        raw = np.asarray(im, dtype=np.float64)
    lo, hi = value_range
    return ImageTensor(lo + raw / 255.0 * (hi - lo), (lo, hi))


def to_uint8(image: ImageTensor) -> np.ndarray:
    scaled = np.rint(image.normalized() * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def save_image(path: Path | str, image: ImageTensor) -> Path:
    """Write a 1- or 3-channel image; PGM requires a single channel."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise ContractViolation(f"unsupported image format: {p.suffix}")
    pixels = to_uint8(image)
    if image.channels == 1:
        im = Image.fromarray(np.ascontiguousarray(pixels[:, :, 0]))
    elif image.channels == 3 and suffix == ".png":
        im = Image.fromarray(pixels)
    else:
        raise ContractViolation(f"cannot write {image.channels} channels as {suffix}")
    p.parent.mkdir(parents=True, exist_ok=True)
    im.save(p)
    return p
