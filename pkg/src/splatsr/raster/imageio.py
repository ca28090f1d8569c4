"""Image files: 8-bit PNG and exact float32 raw dumps.

Raw layout: ASCII line ``F32RAW <height> <width> <channels>\\n`` followed by
little-endian float32 samples in row-major (H, W, C) order. Values are
treated as linear; no gamma transform is applied.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_raw(img: np.ndarray, path) -> None:
    arr = np.asarray(img, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"F32RAW {h} {w} {c}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_raw(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 4 or header[0] != "F32RAW":
            raise ValueError(f"{path}: not a F32RAW image dump")
        h, w, c = (int(x) for x in header[1:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != h * w * c:
        raise ValueError(f"{path}: expected {h * w * c} samples, found {data.size}")
    return data.reshape(h, w, c).astype(np.float32)
