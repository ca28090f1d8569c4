"""Token grids and patch geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import ShapeError, Tensor


@dataclass
class TokenGrid:
    """(rows * cols, C) tokens in row-major patch order."""

    tokens: Tensor
    rows: int
    cols: int
    patch_size: int
    view_id: int = 0

    def __post_init__(self):
        if self.tokens.shape[0] != self.rows * self.cols:
            raise ShapeError(f"token count {self.tokens.shape[0]} != {self.rows}x{self.cols}")

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    def grid(self) -> np.ndarray:
        return self.tokens.data.reshape(self.rows, self.cols, -1)

    def with_tokens(self, tokens: Tensor) -> "TokenGrid":
        return TokenGrid(tokens, self.rows, self.cols, self.patch_size, self.view_id)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, ch) -> (rows*cols, patch*patch*ch); patch pixels flattened as (py, px, ch)."""
    image = np.asarray(image)
    h, w, ch = image.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {patch}")
    rows, cols = h // patch, w // patch
    x = image.reshape(rows, patch, cols, patch, ch).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(x.reshape(rows * cols, patch * patch * ch))


def sincos_2d(rows: int, cols: int, dim: int) -> np.ndarray:
    """Fixed 2D sine-cosine position code: first half encodes the row, second the column."""
    if dim % 4:
        raise ShapeError(f"position code dim {dim} must be a multiple of 4")
    quarter = dim // 4
    omega = 1.0 / 10000.0 ** (np.arange(quarter) / quarter)
    yy, xx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    ay = yy.reshape(-1, 1) * omega
    ax = xx.reshape(-1, 1) * omega
    return np.concatenate([np.sin(ay), np.cos(ay), np.sin(ax), np.cos(ax)], axis=1)


def pixel_patch_index(width: int, height: int, patch: int) -> np.ndarray:
    """Token index of every pixel, shape (H, W)."""
    cols = width // patch
    v, u = np.mgrid[0:height, 0:width]
    return (v // patch) * cols + (u // patch)
