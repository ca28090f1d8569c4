"""Cross-view decoder with weights shared between the two views."""

from __future__ import annotations

import numpy as np

from ..tensor import Tensor
from ..tensor.nn import MLP, LayerNorm, Module, MultiHeadAttention
from .grid import TokenGrid


class UnsupportedConfigurationError(ValueError):
    pass


class DecoderBlock(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.norm_ctx = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm3 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, dim, rng)

    def __call__(self, x: Tensor, other: Tensor, cross: bool = True) -> Tensor:
        x = x + self.self_attn(self.norm1(x), tag="decoder_self")
        if cross:
            x = x + self.cross_attn(self.norm2(x), self.norm_ctx(other), tag="decoder_cross")
        return x + self.mlp(self.norm3(x))


class CrossViewDecoder(Module):
    """Each block updates both views from the previous block's tokens of both views."""

    def __init__(self, dim: int, heads: int, depth: int, mlp_ratio: int, rng: np.random.Generator):
        self.blocks = [DecoderBlock(dim, heads, mlp_ratio, rng) for _ in range(depth)]
        self.norm = LayerNorm(dim)

    def __call__(self, grids: list[TokenGrid], cross: bool = True) -> list[TokenGrid]:
        if len(grids) != 2:
            raise UnsupportedConfigurationError(f"decoder expects exactly 2 views, got {len(grids)}")
        a, b = grids[0].tokens, grids[1].tokens
        for blk in self.blocks:
            a, b = blk(a, b, cross), blk(b, a, cross)
        return [grids[0].with_tokens(self.norm(a)), grids[1].with_tokens(self.norm(b))]
