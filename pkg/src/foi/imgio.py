"""PNG/JPEG loading, saving, and resizing helpers."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def load_rgb(path: str) -> np.ndarray:
    """Load an image file as (H, W, 3) uint8 RGB."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def decode_rgb(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def save_png(path: str, array: np.ndarray) -> None:
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path, format="PNG")


def encode_png(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def save_gray_png(path: str, values01: np.ndarray) -> None:
    """Save a [0, 1]-valued 2-D array as 8-bit grayscale (binary maps hit 0/255)."""
    data = np.clip(np.asarray(values01, dtype=float), 0.0, 1.0)
    Image.fromarray(np.round(data * 255.0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an (H, W, 3) uint8 image."""
    arr = np.asarray(image, dtype=np.uint8)
    if arr.shape[:2] == (height, width):
        return arr
    resized = Image.fromarray(arr).resize((width, height), Image.BILINEAR)
    return np.asarray(resized)


def to_float01(image_uint8: np.ndarray) -> np.ndarray:
    return np.asarray(image_uint8, dtype=float) / 255.0


def to_uint8(image01: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image01, dtype=float), 0.0, 1.0) * 255.0).astype(
        np.uint8
    )
