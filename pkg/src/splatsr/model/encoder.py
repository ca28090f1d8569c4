"""Patch-embedding transformer encoder."""

from __future__ import annotations

import numpy as np

from .. import tensor as F
from ..tensor import Tensor
from ..tensor.nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention
from .grid import TokenGrid, patchify, sincos_2d


class Block(Module):
    """Pre-norm transformer block: self-attention then MLP, both residual."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, dim, rng)

    def __call__(self, x: Tensor, tag: str = "self") -> Tensor:
        x = x + self.attn(self.norm1(x), tag=tag)
        return x + self.mlp(self.norm2(x))


class PatchEncoder(Module):
    def __init__(self, patch_size: int, dim: int, heads: int, depth: int, mlp_ratio: int,
                 rng: np.random.Generator, channels: int = 3):
        self.patch_size = patch_size
        self.embed = Linear(patch_size * patch_size * channels, dim, rng)
        self.intrinsics = Linear(4, dim, rng)
        self.blocks = [Block(dim, heads, mlp_ratio, rng) for _ in range(depth)]
        self.norm = LayerNorm(dim)

    def embed_patches(self, image: np.ndarray) -> Tensor:
        """Linear patch embedding alone, before position and intrinsics codes."""
        dt = F.get_default_dtype()
        return self.embed(Tensor(patchify(image, self.patch_size).astype(dt)))

    def __call__(self, image: np.ndarray, intrinsics, view_id: int = 0, tag: str = "encoder") -> TokenGrid:
        h, w, _ = image.shape
        p = self.patch_size
        rows, cols = h // p, w // p
        x = self.embed_patches(image)
        dt = F.get_default_dtype()
        x = x + Tensor(sincos_2d(rows, cols, x.shape[-1]).astype(dt))
        x = x + self.intrinsics(Tensor(np.asarray(intrinsics, dtype=dt).reshape(1, 4)))
        for blk in self.blocks:
            x = blk(x, tag=tag)
        return TokenGrid(self.norm(x), rows, cols, p, view_id)
