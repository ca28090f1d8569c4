"""Training objective: pixel MSE plus a multi-scale random-feature term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as F
from ..tensor import ShapeError, Tensor

PROXY_SEED = 20240917
PROXY_SCALES = (1, 2, 4)
PROXY_PATCH = 4
PROXY_FEATURES = 64


@dataclass(frozen=True)
class LossWeights:
    w_mse: float = 1.0
    w_perc: float = 0.05

    def __post_init__(self):
        if self.w_mse < 0 or self.w_perc < 0:
            raise ValueError("loss weights must be non-negative")


def _projection(scale_index: int, dtype) -> np.ndarray:
    rng = np.random.default_rng([PROXY_SEED, scale_index])
    d = PROXY_PATCH * PROXY_PATCH * 3
    # more outputs than inputs and Gaussian entries: injective with probability one
    return (rng.normal(size=(d, PROXY_FEATURES)) * (2.0 / np.sqrt(d))).astype(dtype)


def _pool(x: Tensor, s: int) -> Tensor:
    if s == 1:
        return x
    h, w, c = x.shape
    return F.mean(F.reshape(x, (h // s, s, w // s, s, c)), axis=(1, 3))


def _patch_features(x: Tensor, proj: np.ndarray) -> Tensor:
    h, w, c = x.shape
    p = PROXY_PATCH
    hp, wp = h // p, w // p
    x = x[: hp * p, : wp * p] if (h % p or w % p) else x
    patches = F.reshape(F.transpose(F.reshape(x, (hp, p, wp, p, c)), (0, 2, 1, 3, 4)), (hp * wp, p * p * c))
    return F.tanh(F.matmul(patches - 0.5, Tensor(proj)))


def perceptual_proxy(pred, target) -> Tensor:
    """Mean over scales of the MSE between tanh random-projection features of 4x4 patches."""
    pred, target = F.as_tensor(pred), F.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"perceptual proxy: shapes {pred.shape} and {target.shape} differ")
    terms = []
    for i, s in enumerate(PROXY_SCALES):
        if pred.shape[0] // s < PROXY_PATCH or pred.shape[1] // s < PROXY_PATCH:
            continue
        proj = _projection(i, pred.dtype)
        fp = _patch_features(_pool(pred, s), proj)
        with F.no_grad():
            ft = _patch_features(_pool(target, s), proj)
        terms.append(F.mse(fp, ft))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


@dataclass
class LossTerms:
    total: Tensor
    mse: float
    perc: float


def image_loss(pred, target, weights: LossWeights = LossWeights()) -> LossTerms:
    pred, target = F.as_tensor(pred), F.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: rendered {pred.shape} and target {target.shape} differ")
    m = F.mse(pred, target)
    p = perceptual_proxy(pred, target)
    total = m * weights.w_mse + p * weights.w_perc
    return LossTerms(total, float(m.data), float(p.data))
