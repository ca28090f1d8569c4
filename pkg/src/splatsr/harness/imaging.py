"""Separable image resampling between LR and HR grids."""

from __future__ import annotations

import numpy as np
from PIL import Image

METHODS = ("nearest", "bilinear", "bicubic")


class ResampleConfigError(ValueError):
    pass


def catmull_rom(x, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel; a = -0.5 is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    m1 = x <= 1
    m2 = (x > 1) & (x < 2)
    out[m1] = (a + 2) * x[m1] ** 3 - (a + 3) * x[m1] ** 2 + 1
    out[m2] = a * x[m2] ** 3 - 5 * a * x[m2] ** 2 + 8 * a * x[m2] - 4 * a
    return out


def resample_matrix(n_in: int, factor: int, method: str) -> np.ndarray:
    """(n_in * factor, n_in) interpolation weights; pixel centers aligned, edges clamped."""
    if method not in METHODS:
        raise ResampleConfigError(f"unknown upsampling method {method!r}; choose from {METHODS}")
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    if method == "nearest":
        mat[rows, np.arange(n_out) // factor] = 1.0
        return mat
    base = np.floor(src).astype(np.int64)
    if method == "bilinear":
        taps, kernel = (0, 1), lambda t: np.maximum(0.0, 1.0 - np.abs(t))
    else:
        taps, kernel = (-1, 0, 1, 2), catmull_rom
    for off in taps:
        j = base + off
        w = kernel(src - j)
        np.add.at(mat, (rows, np.clip(j, 0, n_in - 1)), w)
    return mat


def upsample(image: np.ndarray, factor: int, method: str = "bicubic") -> np.ndarray:
    """Upsample an (H, W[, C]) image by an integer factor."""
    if int(factor) != factor or factor < 1:
        raise ResampleConfigError(f"upsampling factor must be a positive integer, got {factor}")
    factor = int(factor)
    img = np.asarray(image)
    h, w = img.shape[:2]
    my = resample_matrix(h, factor, method).astype(img.dtype if img.dtype.kind == "f" else np.float64)
    mx = resample_matrix(w, factor, method).astype(my.dtype)
    return np.einsum("ij,jk...->ik...", my, np.einsum("ij,kj...->ki...", mx, img))


def area_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Mean over non-overlapping factor x factor blocks."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ResampleConfigError(f"image {h}x{w} is not divisible by {factor}")
    rest = img.shape[2:]
    return img.reshape(h // factor, factor, w // factor, factor, *rest).mean(axis=(1, 3)).astype(img.dtype)


def lanczos_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Pillow's Lanczos filter per channel, kept in float."""
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[:2]
    size = (w // factor, h // factor)
    chans = [np.asarray(Image.fromarray(img[..., c], mode="F").resize(size, Image.LANCZOS))
             for c in range(img.shape[2])]
    return np.clip(np.stack(chans, axis=-1), 0.0, 1.0)
