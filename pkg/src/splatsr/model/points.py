"""Point-level offset prediction: position tokens, k-NN attention blocks, Gaussian head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .. import tensor as F
from ..tensor import Tensor
from ..tensor.nn import MLP, LayerNorm, Linear, Module
from .config import NetworkConfig


def knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """(N, min(k, N)) neighbour indices, self included, ordered by distance then index.

    With fewer than k points every point attends to all of them.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=np.int64)
    kk = min(k, n)
    # over-fetch a little so ties at the boundary can be resolved by index
    q = min(n, kk + 4)
    dist, idx = cKDTree(points).query(points, k=q)
    dist = np.asarray(dist).reshape(n, q)
    idx = np.asarray(idx).reshape(n, q)
    order = np.lexsort((idx, dist), axis=1)
    return np.take_along_axis(idx, order, axis=1)[:, :kk].astype(np.int64)


def median_nn_distance(points: np.ndarray) -> float:
    """Median distance to the nearest other point (1.0 for fewer than two points)."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2:
        return 1.0
    dist, _ = cKDTree(points).query(points, k=2)
    d = float(np.median(dist[:, 1]))
    return d if d > 0 else 1.0


@dataclass
class PointGeometry:
    """Fixed per-scene inputs of the point stack."""

    neighbors: np.ndarray      # (N, k)
    rel_pos: np.ndarray        # (N, k, 3) neighbour minus center, in units of the NN scale
    norm_pos: np.ndarray       # (N, 3) centers normalized to zero mean / unit RMS radius
    nn_scale: float

    @staticmethod
    def build(means: np.ndarray, k: int, dtype=np.float32) -> "PointGeometry":
        means = np.asarray(means, dtype=np.float64)
        nbr = knn_indices(means, k)
        scale = median_nn_distance(means)
        rel = (means[nbr] - means[:, None, :]) / scale
        centered = means - means.mean(axis=0) if len(means) else means
        rms = float(np.sqrt((centered ** 2).sum(axis=1).mean())) if len(means) else 1.0
        norm = centered / (rms if rms > 0 else 1.0)
        return PointGeometry(nbr, rel.astype(dtype), norm.astype(dtype), scale)


def local_attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-point attention over gathered neighbours.

    q: (N, 1, H, D); k, v: (N, k, H, D); bias: (N, k, H). Returns (N, H, D).
    Written with broadcasts and reductions instead of N tiny matmuls.
    """
    d = q.shape[-1]
    logits = F.tsum(q * k, axis=-1) * (1.0 / np.sqrt(d))               # (N, k, H)
    if bias is not None:
        logits = logits + bias
    w = F.softmax(logits, axis=1)
    F.log_attention("point", np.swapaxes(w.data, 1, 2))
    return F.tsum(F.reshape(w, w.shape + (1,)) * v, axis=1)


class PointBlock(Module):
    """Pre-norm attention over each point's k nearest neighbours with a learned
    relative-position logit bias, followed by an MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rpe_hidden: int, rng: np.random.Generator):
        self.heads = heads
        self.norm1 = LayerNorm(dim)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.rpe = MLP(3, rpe_hidden, heads, rng)
        self.out = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, dim, rng)

    def __call__(self, x: Tensor, geo: PointGeometry) -> Tensor:
        n, c = x.shape
        h = self.heads
        d = c // h
        kk = geo.neighbors.shape[1]
        y = self.norm1(x)
        q = F.reshape(self.q(y), (n, 1, h, d))
        k = F.reshape(F.gather(self.k(y), geo.neighbors), (n, kk, h, d))
        v = F.reshape(F.gather(self.v(y), geo.neighbors), (n, kk, h, d))
        bias = self.rpe(Tensor(geo.rel_pos))                            # (N, k, H)
        att = local_attention(q, k, v, bias)
        x = x + self.out(F.reshape(att, (n, c)))
        return x + self.mlp(self.norm2(x))


class OffsetPredictor(Module):
    """[MLP(mu); F; K] -> fused token -> k-NN blocks -> raw offset record per Gaussian."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        c = cfg.embed_dim
        self.pos = MLP(3, c, c, rng)
        self.intrinsics = Linear(4, c, rng)
        self.fuse = Linear(3 * c, c, rng)
        self.blocks = [PointBlock(c, cfg.heads, cfg.mlp_ratio, cfg.rpe_hidden, rng)
                       for _ in range(cfg.point_blocks)]
        self.head_norm = LayerNorm(c)
        self.head_fc = Linear(c, c, rng)
        self.head_out = Linear(c, cfg.offset_dim, rng, zero_init=True)

    def __call__(self, features: Tensor, geo: PointGeometry, intrinsics: np.ndarray,
                 use_blocks: bool = True) -> Tensor:
        dt = F.get_default_dtype()
        pos = self.pos(Tensor(geo.norm_pos.astype(dt)))
        intr = self.intrinsics(Tensor(np.asarray(intrinsics, dtype=dt)))
        x = self.fuse(F.concat([pos, features, intr], axis=-1))
        if use_blocks:
            for blk in self.blocks:
                x = blk(x, geo)
        return self.head_out(F.gelu(self.head_fc(self.head_norm(x))))
