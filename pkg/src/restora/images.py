"""Image array helpers: (3, H, W) float arrays in [0, 1], RGB, PNG round-trips."""

from __future__ import annotations

import numpy as np
from PIL import Image


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the (3, H, W) / finite / [0, 1] contract and return the array."""
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) array, got {getattr(img, 'shape', type(img))}")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values outside [0, 1]")
    return img


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_png(img: np.ndarray, path) -> None:
    validate_image(img)
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def png_bytes(img: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def from_png_bytes(data: bytes) -> np.ndarray:
    import io

    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))
