"""Float image container and PNG export.

IMGF layout: magic "IMGF", u32 width, u32 height, u32 channels, then
float32 little-endian values in row-major [height][width][channel] order.
Metrics always run on the float data; PNG export is 8-bit and exists for
eyeballing only.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

IMGF_MAGIC = b"IMGF"


def save_image(path, image: np.ndarray) -> None:
    path = Path(path)
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"image must be [H, W] or [H, W, C], got {img.shape}")
    h, w, c = img.shape
    with open(path, "wb") as f:
        f.write(IMGF_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def load_image(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(4) != IMGF_MAGIC:
            raise ValueError(f"{path}: not an image file")
        w, h, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(4 * w * h * c), dtype="<f4")
        img = data.reshape(h, w, c).astype(np.float32).copy()
    return img[:, :, 0] if c == 1 else img


def export_png(path, image: np.ndarray) -> None:
    from PIL import Image

    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(Path(path))
