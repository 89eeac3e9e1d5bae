"""Image files: 8-bit gamma-encoded PNG and bit-exact raw float dumps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .container import RAW_IMAGE_MAGIC, read_container, write_container

GAMMA = 2.2


def save_png(path, image: np.ndarray) -> None:
    """Write a linear float image, clamped to [0, 1] and gamma-encoded."""
    encoded = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) ** (1.0 / GAMMA)
    pixels = np.round(encoded * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)


def load_png(path) -> np.ndarray:
    pixels = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return (pixels / 255.0) ** GAMMA


def save_raw(path, image: np.ndarray) -> None:
    write_container(path, {"image": np.asarray(image, dtype=np.float64)},
                    {"order": "row-major"}, RAW_IMAGE_MAGIC)


def load_raw(path) -> np.ndarray:
    arrays, _ = read_container(path, RAW_IMAGE_MAGIC)
    return arrays["image"]


def load_image(path) -> np.ndarray:
    """Load a linear RGB float image from ``.png`` or ``.raw``."""
    path = Path(path)
    if path.suffix.lower() == ".raw":
        return load_raw(path)
    return load_png(path)
