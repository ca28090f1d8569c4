"""Bidirectional cross-attention between image tokens and backbone tokens."""

from __future__ import annotations

import numpy as np

from .. import tensor as F
from ..tensor import ShapeError, Tensor
from ..tensor.nn import Linear, Module, merge_heads, split_heads
from .grid import TokenGrid


class BidirectionalRefine(Module):
    """t_ca = FC([U_o<-p, U_p<-o]) + t_en.

    U_o<-p lets image tokens query backbone tokens, U_p<-o the reverse. The
    query/key/value maps are bias-free projections so each direction is
    exactly softmax(Q K^T / sqrt(d)) V per head.
    """

    def __init__(self, dim: int, pre_dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q_o = Linear(dim, dim, rng, bias=False)
        self.k_o = Linear(dim, dim, rng, bias=False)
        self.v_o = Linear(dim, dim, rng, bias=False)
        self.q_p = Linear(pre_dim, dim, rng, bias=False)
        self.k_p = Linear(pre_dim, dim, rng, bias=False)
        self.v_p = Linear(pre_dim, dim, rng, bias=False)
        self.fuse = Linear(2 * dim, dim, rng)

    def _attend(self, q, k, v, tag):
        h = self.heads
        out = F.scaled_dot_attention(split_heads(q, h), split_heads(k, h), split_heads(v, h), tag=tag)
        return merge_heads(out)

    def __call__(self, t_en: TokenGrid, t_pre: TokenGrid) -> TokenGrid:
        if t_en.tokens.shape[0] != t_pre.tokens.shape[0]:
            raise ShapeError(f"refine: image grid {t_en.rows}x{t_en.cols} and backbone grid "
                             f"{t_pre.rows}x{t_pre.cols} differ")
        x, p = t_en.tokens, t_pre.tokens
        u_op = self._attend(self.q_o(x), self.k_p(p), self.v_p(p), "refine_o<-p")
        u_po = self._attend(self.q_p(p), self.k_o(x), self.v_o(x), "refine_p<-o")
        return t_en.with_tokens(self.fuse(F.concat([u_op, u_po], axis=-1)) + x)
