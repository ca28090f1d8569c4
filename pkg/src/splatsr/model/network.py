"""The LR-views -> HR-Gaussians mapping network and its direct-regression baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as F
from ..camera import Camera, unproject_depth
from ..scene import SH_C0, GaussianScene, rotation_to_quaternion
from ..tensor import Tensor
from ..tensor.nn import LayerNorm, Linear, Module, parameter, trunc_normal
from .compose import OffsetCaps, compose_tensors, opacity_shift
from .config import NetworkConfig
from .decoder import CrossViewDecoder, UnsupportedConfigurationError
from .encoder import PatchEncoder
from .grid import TokenGrid, pixel_patch_index
from .points import OffsetPredictor, PointGeometry
from .query import query_features
from .refine import BidirectionalRefine


@dataclass
class ViewInput:
    image: np.ndarray          # (H, W, 3) LR view upsampled to HR
    cam: Camera                # HR camera
    t_pre: np.ndarray          # (rows * cols, backbone_dim) frozen backbone tokens
    depth: np.ndarray          # (H, W) oracle depth upsampled to HR


@dataclass
class NetworkInput:
    views: list[ViewInput]
    dense: GaussianScene       # scaffold
    source_view: np.ndarray    # (N,) view that produced each scaffold Gaussian
    geometry: PointGeometry
    pos_cap: float


@dataclass
class GaussianTensors:
    means: Tensor
    quats: Tensor
    scales: Tensor
    opacities: Tensor
    sh: Tensor

    def __len__(self) -> int:
        return self.means.shape[0]

    def to_scene(self, sh_degree: int = 1) -> GaussianScene:
        return GaussianScene(self.means.data, self.opacities.data, self.quats.data, self.scales.data,
                             self.sh.data, sh_degree, dtype=self.means.dtype)

    @staticmethod
    def from_scene(scene: GaussianScene, dtype=None) -> "GaussianTensors":
        dt = dtype or scene.dtype
        return GaussianTensors(*(Tensor(np.asarray(a, dtype=dt)) for a in
                                 (scene.centers, scene.rotations, scene.scales, scene.opacities, scene.sh)))


def _camera_quaternion(cam: Camera) -> np.ndarray:
    """Rotation taking camera axes to world axes."""
    return rotation_to_quaternion(cam.R.T)


class DirectHead(Module):
    """Baseline without offset learning: one Gaussian per HR pixel regressed from decoded tokens.

    Centers sit on the upsampled oracle depth, colors start from the upsampled
    pixel; the zero-initialized output layer predicts residual opacity, scale,
    color and depth.
    """

    BASE_OPACITY = 0.9
    BASE_SCALE = 0.6

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        c = cfg.embed_dim
        self.n_sh = cfg.n_sh
        self.subpixel = parameter(trunc_normal(rng, (cfg.patch_size * cfg.patch_size, c)))
        self.norm = LayerNorm(c)
        self.fc = Linear(c, c, rng)
        self.out = Linear(c, 1 + 1 + 3 + 3, rng, zero_init=True)

    def __call__(self, grid: TokenGrid, view: ViewInput) -> GaussianTensors:
        dt = F.get_default_dtype()
        cam = view.cam
        h, w = cam.height, cam.width
        p = grid.patch_size
        tok = F.gather(grid.tokens, pixel_patch_index(w, h, p).reshape(-1))
        v, u = np.mgrid[0:h, 0:w]
        sub = F.gather(self.subpixel, ((v % p) * p + (u % p)).reshape(-1))
        raw = self.out(F.gelu(self.fc(self.norm(tok + sub))))
        n = h * w
        d_depth = F.reshape(raw[:, 0:1], (n,))
        d_alpha = F.reshape(raw[:, 1:2], (n,))
        d_scale, d_rgb = raw[:, 2:5], raw[:, 5:8]

        depth = view.depth.reshape(-1).astype(dt)
        rays = (unproject_depth(cam, np.ones((h, w))) - cam.center).reshape(-1, 3).astype(dt)
        z = Tensor(depth) * F.exp(F.clamp(d_depth, -0.5, 0.5))
        means = Tensor(cam.center.astype(dt)) + Tensor(rays) * F.reshape(z, (n, 1))
        quats = Tensor(np.tile(_camera_quaternion(cam), (n, 1)).astype(dt))
        base = (self.BASE_SCALE * depth / cam.fx)[:, None]
        scales = Tensor(np.repeat(base, 3, axis=1).astype(dt)) * F.exp(F.clamp(d_scale, -np.log(4.0), np.log(4.0)))
        alpha = opacity_shift(np.full(n, self.BASE_OPACITY, dtype=dt), d_alpha)
        dc = Tensor((view.image.reshape(-1, 3) / SH_C0).astype(dt)) + d_rgb
        parts = [F.reshape(dc, (n, 1, 3))]
        if self.n_sh > 1:
            parts.append(Tensor(np.zeros((n, self.n_sh - 1, 3), dtype=dt)))
        sh = F.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        return GaussianTensors(means, quats, scales, alpha, sh)


class SRNetwork(Module):
    """encode -> refine -> decode -> query -> point blocks -> head -> compose."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg.embed_dim
        self.encoder = PatchEncoder(cfg.patch_size, c, cfg.heads, cfg.enc_depth, cfg.mlp_ratio, rng)
        self.refine = BidirectionalRefine(c, cfg.backbone_dim, cfg.heads, rng)
        self.decoder = CrossViewDecoder(c, cfg.heads, cfg.dec_depth, cfg.mlp_ratio, rng)
        self.out_of_view = parameter(trunc_normal(rng, (c,)))
        self.offsets = OffsetPredictor(cfg, rng)
        self.direct = DirectHead(cfg, rng)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        # parameters of the inactive pathway are not part of this variant
        params = super().named_parameters(prefix)
        drop = ("offsets.", "out_of_view") if not self.cfg.use_offsets else ("direct.",)
        if not self.cfg.use_refine:
            drop = drop + ("refine.",)
        return {k: v for k, v in params.items() if not k[len(prefix):].startswith(drop)}

    def tokens(self, inp: NetworkInput) -> list[TokenGrid]:
        """Decoded per-view token grids t_de."""
        cfg = self.cfg
        if len(inp.views) != 2:
            raise UnsupportedConfigurationError(f"expected 2 input views, got {len(inp.views)}")
        grids = []
        for v, view in enumerate(inp.views):
            t_en = self.encoder(view.image, view.cam.intrinsics_vector(), view_id=v)
            if cfg.use_refine:
                pre = Tensor(view.t_pre.astype(F.get_default_dtype()))
                t_en = self.refine(t_en, TokenGrid(pre, t_en.rows, t_en.cols, t_en.patch_size, v))
            grids.append(t_en)
        return self.decoder(grids, cross=cfg.use_cross_view)

    def raw_offsets(self, inp: NetworkInput, grids: list[TokenGrid] | None = None) -> Tensor:
        grids = grids if grids is not None else self.tokens(inp)
        cams = [v.cam for v in inp.views]
        feats = query_features(inp.dense.centers, inp.source_view, cams, grids, self.out_of_view)
        intr = np.stack([c.intrinsics_vector() for c in cams])[inp.source_view]
        return self.offsets(feats, inp.geometry, intr, use_blocks=self.cfg.use_point_blocks)

    def __call__(self, inp: NetworkInput) -> GaussianTensors:
        grids = self.tokens(inp)
        if not self.cfg.use_offsets:
            parts = [self.direct(g, v) for g, v in zip(grids, inp.views)]
            return GaussianTensors(*(F.concat([getattr(p, f) for p in parts], axis=0)
                                     for f in ("means", "quats", "scales", "opacities", "sh")))
        raw = self.raw_offsets(inp, grids)
        d = inp.dense
        caps = OffsetCaps(inp.pos_cap, self.cfg.log_scale_cap, self.cfg.raw_compose)
        m, q, s, a, c = compose_tensors(d.centers, d.opacities, d.rotations, d.scales, d.sh, raw, caps)
        return GaussianTensors(m, q, s, a, c)
