"""Residual composition of the scaffold with predicted offsets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as F
from ..scene import GaussianScene
from ..tensor import Tensor, make_node


class ComposeError(ValueError):
    pass


@dataclass
class OffsetCaps:
    position: float                     # c_mu, world units
    log_scale: float = float(np.log(4.0))
    raw: bool = False                   # plain addition with invariant-restoring clamps


@dataclass
class OffsetField:
    d_mu: np.ndarray        # (N, 3)
    d_alpha: np.ndarray     # (N,) logit-space
    d_rot: np.ndarray       # (N, 4)
    d_scale: np.ndarray     # (N, 3) log-space
    d_color: np.ndarray     # (N, K, 3)

    def __len__(self) -> int:
        return self.d_mu.shape[0]

    @staticmethod
    def zeros(n: int, n_sh: int, dtype=np.float32) -> "OffsetField":
        return OffsetField(np.zeros((n, 3), dtype), np.zeros(n, dtype), np.zeros((n, 4), dtype),
                           np.zeros((n, 3), dtype), np.zeros((n, n_sh, 3), dtype))

    @staticmethod
    def from_raw(raw: np.ndarray, n_sh: int) -> "OffsetField":
        raw = np.asarray(raw)
        parts = split_raw(raw, n_sh)
        return OffsetField(*parts)

    def raw(self) -> np.ndarray:
        n = len(self)
        return np.concatenate([self.d_mu, self.d_alpha[:, None], self.d_rot, self.d_scale,
                               self.d_color.reshape(n, -1)], axis=1)


def split_raw(raw, n_sh: int):
    """Slice a (N, 11 + 3K) record into its five fields (arrays or Tensors)."""
    n = raw.shape[0]
    reshape = F.reshape if isinstance(raw, Tensor) else np.reshape
    return (raw[:, 0:3], reshape(raw[:, 3:4], (n,)), raw[:, 4:8], raw[:, 8:11],
            reshape(raw[:, 11:11 + 3 * n_sh], (n, n_sh, 3)))


def _check_finite(raw: np.ndarray) -> None:
    bad = ~np.isfinite(raw.reshape(raw.shape[0], -1)).all(axis=1)
    if bad.any():
        raise ComposeError(f"non-finite offset for primitive {int(np.argmax(bad))}")


def opacity_shift(alpha: np.ndarray, delta: Tensor) -> Tensor:
    """sigmoid(logit(alpha) + delta) without forming the logit.

    alpha * e^d / (1 + alpha * expm1(d)) returns alpha unchanged at d = 0 and
    stays finite for alpha in {0, 1}; the e^-d form is used for d > 0.
    """
    a = np.asarray(alpha, dtype=delta.dtype)
    d = delta.data
    pos = d > 0
    out = np.empty_like(a)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        en = np.exp(-d[pos])
        out[pos] = a[pos] / (a[pos] + (1 - a[pos]) * en)
        out[~pos] = a[~pos] * np.exp(d[~pos]) / (1 + a[~pos] * np.expm1(d[~pos]))
    # 0 and 1 are fixed points of the logit shift
    out = np.where(a == 0, 0, np.where(a == 1, 1, out))
    out = np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0).astype(a.dtype)
    return make_node(out, (delta,), lambda g: (g * out * (1 - out),), "opacity_shift")


def normalize_rows(q: Tensor, passthrough: np.ndarray | None = None) -> Tensor:
    """Row-wise unit normalization; rows flagged in ``passthrough`` keep their
    (already unit) values bit-exactly. The gradient is that of q / |q| everywhere."""
    n = np.sqrt((q.data * q.data).sum(axis=-1, keepdims=True))
    if np.any(n == 0):
        raise ComposeError(f"zero-norm quaternion for primitive {int(np.argmax(n.reshape(-1) == 0))}")
    u = q.data / n
    out = np.where(passthrough[:, None], q.data, u) if passthrough is not None else u

    def backward(g):
        return ((g - u * (g * u).sum(axis=-1, keepdims=True)) / n,)
    return make_node(out.astype(q.dtype), (q,), backward, "normalize")


def compose_tensors(centers, opacities, rotations, scales, sh, raw: Tensor, caps: OffsetCaps):
    """Differentiable composition; returns (means, quats, scales, opacities, sh) Tensors."""
    dt = raw.dtype
    n_sh = sh.shape[1]
    if raw.shape[0] != centers.shape[0]:
        raise ComposeError(f"offset count {raw.shape[0]} != scaffold size {centers.shape[0]}")
    _check_finite(raw.data)
    d_mu, d_a, d_r, d_s, d_c = split_raw(raw, n_sh)
    centers, rotations, scales, sh = (np.asarray(x, dtype=dt) for x in (centers, rotations, scales, sh))
    opacities = np.asarray(opacities, dtype=dt)
    unchanged = ~np.any(d_r.data != 0, axis=1)
    if caps.raw:
        means = Tensor(centers) + d_mu
        alpha = F.clamp(Tensor(opacities) + d_a, 0.0, 1.0)
        quats = normalize_rows(Tensor(rotations) + d_r, unchanged)
        scl = F.clamp(Tensor(scales) + d_s, 1e-6, None)
    else:
        means = Tensor(centers) + F.tanh(d_mu) * caps.position
        alpha = opacity_shift(opacities, d_a)
        quats = normalize_rows(Tensor(rotations) + d_r, unchanged)
        scl = Tensor(scales) * F.exp(F.clamp(d_s, -caps.log_scale, caps.log_scale))
    colors = Tensor(sh) + d_c
    return means, quats, scl, alpha, colors


def compose(dense: GaussianScene, offsets: OffsetField, caps: OffsetCaps) -> GaussianScene:
    """mu + c_mu tanh(d_mu), sigmoid(logit a + d_a), normalize(r + d_r), s exp(clamp(d_s)), c + d_c."""
    if len(offsets) != len(dense):
        raise ComposeError(f"offset count {len(offsets)} != scaffold size {len(dense)}")
    raw = offsets.raw().astype(dense.dtype)
    with F.no_grad():
        m, q, s, a, c = compose_tensors(dense.centers, dense.opacities, dense.rotations, dense.scales,
                                        dense.sh, Tensor(raw, dtype=dense.dtype), caps)
    return GaussianScene(m.data, a.data, q.data, s.data, c.data, dense.sh_degree, dtype=dense.dtype)
