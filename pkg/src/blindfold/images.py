"""Small image-file helpers for the CLI and the feature-map interchange.

Images move between tools as ordinary files (PPM/PNG/...); in memory they
are float arrays in [0, 1], shaped (H, W) or (H, W, 3).
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .fieldmath import FieldError


def load_image(path: str) -> np.ndarray:
    """Read an image file into a float array in [0, 1]."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        data = np.asarray(img, dtype=np.float64)
    return data / 255.0


def save_image(path: str, array: np.ndarray) -> None:
    """Write a float array in [0, 1] (or uint8) as an image file."""
    data = np.asarray(array)
    if data.dtype != np.uint8:
        data = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
        data = np.round(data * 255.0).astype(np.uint8)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim == 2:
        img = Image.fromarray(data, mode="L")
    elif data.ndim == 3 and data.shape[2] == 3:
        img = Image.fromarray(data, mode="RGB")
    else:
        raise FieldError(f"cannot save image of shape {data.shape}")
    img.save(path)
