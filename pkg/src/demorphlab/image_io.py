"""8-bit RGB file I/O with a float [0,1] in-memory representation.

Every image flowing through the library is an H x W x 3 float array with
values in [0, 1]. Files on disk are 8-bit RGB in a lossless raster format
(PNG by default).
"""

from pathlib import Path

import numpy as np
from PIL import Image

QUANT_STEP = 1.0 / 255.0


def to_float(img_u8: np.ndarray) -> np.ndarray:
    """uint8 [0,255] -> float64 [0,1]."""
    return np.asarray(img_u8, dtype=np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """float [0,1] -> uint8 [0,255] with round-half-away quantization."""
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Load an image file as an H x W x 3 float array in [0,1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return to_float(np.asarray(rgb))


def save_image(img: np.ndarray, path) -> None:
    """Write a float [0,1] image as 8-bit RGB. Parent dirs are created."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path)
