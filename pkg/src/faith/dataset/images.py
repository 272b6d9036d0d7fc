"""8-bit PNG I/O for ``[C, H, W]`` float images in [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def save_image(image: np.ndarray, path) -> None:
    """Write an RGB ``[3, H, W]`` or single-channel ``[H, W]`` array in [0, 1] as PNG."""
    arr = to_uint8(image)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    else:
        Image.fromarray(arr, mode="L").save(path, format="PNG")


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127
