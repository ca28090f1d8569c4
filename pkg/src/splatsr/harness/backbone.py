"""Stand-in LR reconstruction backbone.

One Gaussian per LR pixel: the center is unprojected along the pixel ray to
the oracle depth, the color comes from the pixel, the rotation follows the
camera axes, and opacity and an isotropic scale come from a small head over
a patch-token encoder. A single scale per Gaussian keeps the footprint from
stretching along the viewing ray, which the input view alone cannot observe. The encoder's token grid is exported as t_pre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as F
from ..camera import Camera, unproject_depth
from ..model.encoder import PatchEncoder
from ..model.grid import TokenGrid, pixel_patch_index
from ..model.network import GaussianTensors
from ..scene import SH_C0, GaussianScene, rotation_to_quaternion
from ..tensor import Tensor
from ..tensor.nn import Linear, Module


class BackboneError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    patch_size: int = 4
    dim: int = 64
    heads: int = 2
    depth: int = 1
    hidden: int = 64
    sh_degree: int = 1
    base_scale: float = 0.5          # isotropic std in pixels before the learned factor
    opacity_bias: float = 2.0
    log_scale_cap: float = 1.0


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = PatchEncoder(cfg.patch_size, cfg.dim, cfg.heads, cfg.depth, 2, rng)
        self.tok = Linear(cfg.dim, cfg.hidden, rng)
        self.pix = Linear(5, cfg.hidden, rng)
        self.out = Linear(cfg.hidden, 2, rng)

    def forward(self, image: np.ndarray, cam: Camera, depth: np.ndarray | None
                ) -> tuple[GaussianTensors, TokenGrid]:
        cfg = self.cfg
        if depth is None:
            raise BackboneError("backbone needs an oracle depth map")
        image = np.asarray(image)
        h, w = image.shape[:2]
        depth = np.asarray(depth)
        if depth.shape != (h, w) or (cam.height, cam.width) != (h, w):
            raise BackboneError(f"image {h}x{w}, depth {depth.shape} and camera "
                                f"{cam.height}x{cam.width} are not aligned")
        if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
            raise BackboneError("depth map must be finite and positive")
        dt = F.get_default_dtype()
        grid = self.encoder(image, cam.intrinsics_vector(), tag="backbone")
        p = cfg.patch_size
        n = h * w
        tok = F.gather(grid.tokens, pixel_patch_index(w, h, p).reshape(-1))
        v, u = np.mgrid[0:h, 0:w]
        sub = np.stack([(u % p) / p - 0.5, (v % p) / p - 0.5], axis=-1).reshape(n, 2)
        pix = np.concatenate([image.reshape(n, 3), sub], axis=1).astype(dt)
        raw = self.out(F.gelu(self.tok(tok) + self.pix(Tensor(pix))))
        opac = F.sigmoid(F.reshape(raw[:, 0:1], (n,)) + cfg.opacity_bias)
        base = (cfg.base_scale * depth.reshape(n) / cam.fx)[:, None].repeat(3, axis=1).astype(dt)
        factor = F.exp(F.clamp(raw[:, 1:2], -cfg.log_scale_cap, cfg.log_scale_cap))
        scales = Tensor(base) * F.broadcast_to(factor, (n, 3))

        means = unproject_depth(cam, depth).reshape(n, 3).astype(dt)
        quats = np.tile(rotation_to_quaternion(cam.R.T), (n, 1)).astype(dt)
        k = (cfg.sh_degree + 1) ** 2
        sh = np.zeros((n, k, 3), dtype=dt)
        sh[:, 0] = image.reshape(n, 3) / SH_C0
        return GaussianTensors(Tensor(means), Tensor(quats), scales, opac, Tensor(sh)), grid

    __call__ = forward

    def reconstruct(self, image, cam, depth) -> tuple[GaussianScene, TokenGrid]:
        """Frozen inference: the per-view LR scene and its token grid."""
        with F.no_grad():
            g, grid = self.forward(image, cam, depth)
        return g.to_scene(self.cfg.sh_degree), grid


def union(parts: list[GaussianTensors]) -> GaussianTensors:
    return GaussianTensors(*(F.concat([getattr(p, f) for p in parts], axis=0)
                             for f in ("means", "quats", "scales", "opacities", "sh")))
