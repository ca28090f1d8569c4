"""Tile-based differentiable splatting: render, render_backward, render_depth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..camera import Camera
from ..scene import GaussianScene
from . import kernels
from .project import Projection, project, project_backward


class RenderContractError(ValueError):
    pass


@dataclass(frozen=True)
class RenderTarget:
    width: int
    height: int
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"render target must be at least 1x1, got {self.width}x{self.height}")

    @staticmethod
    def for_camera(cam: Camera, background=(0.0, 0.0, 0.0)) -> "RenderTarget":
        return RenderTarget(cam.width, cam.height, tuple(background))


@dataclass(frozen=True)
class RenderConfig:
    """Renderer knobs. The defaults follow common 3DGS practice."""

    tile_size: int = 16
    cutoff_sigma: float = 3.0
    transmittance_min: float = 1e-4
    dilation: float = 0.3
    near: float = 0.01
    far: float = 100.0


DEFAULT_CONFIG = RenderConfig()


@dataclass
class SplatGradients:
    means: np.ndarray
    opacities: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    sh: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"means": self.means, "opacities": self.opacities, "rotations": self.rotations,
                "scales": self.scales, "sh": self.sh}


@dataclass
class RasterState:
    """Everything a backward pass needs from its forward pass."""

    cam: Camera
    target: RenderTarget
    cfg: RenderConfig
    proj: Projection
    opacities: np.ndarray
    tile_ranges: np.ndarray
    entry_ids: np.ndarray
    tiles_x: int
    raw: np.ndarray
    end: np.ndarray
    transmittance: np.ndarray
    depth: np.ndarray
    n_gaussians: int = field(default=0)

    @property
    def image(self) -> np.ndarray:
        return np.clip(self.raw, 0.0, 1.0)


def _bin_tiles(proj: Projection, width: int, height: int, tile: int):
    tiles_x = -(-width // tile)
    tiles_y = -(-height // tile)
    u, v = proj.means2d[:, 0].astype(np.float64), proj.means2d[:, 1].astype(np.float64)
    r = proj.radii.astype(np.float64)
    vis = (proj.radii > 0) & (u + r >= 0) & (u - r <= width - 1) & (v + r >= 0) & (v - r <= height - 1)
    idx = np.nonzero(vis)[0]
    x0 = np.clip(np.floor((u[idx] - r[idx]) / tile), 0, tiles_x - 1).astype(np.int64)
    x1 = np.clip(np.floor((u[idx] + r[idx]) / tile), 0, tiles_x - 1).astype(np.int64)
    y0 = np.clip(np.floor((v[idx] - r[idx]) / tile), 0, tiles_y - 1).astype(np.int64)
    y1 = np.clip(np.floor((v[idx] + r[idx]) / tile), 0, tiles_y - 1).astype(np.int64)
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    counts = nx * ny
    owner = np.repeat(np.arange(idx.shape[0]), counts)
    local = np.arange(owner.shape[0]) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_id = (y0[owner] + local // nx[owner]) * tiles_x + (x0[owner] + local % nx[owner])
    gid = idx[owner]
    # depth order within a tile, ties broken by primitive index
    order = np.lexsort((gid, proj.depths[gid], tile_id))
    tile_id, gid = tile_id[order], gid[order]
    n_tiles = tiles_x * tiles_y
    bounds = np.searchsorted(tile_id, np.arange(n_tiles + 1))
    ranges = np.stack([bounds[:-1], bounds[1:]], axis=1).astype(np.int64)
    return ranges, gid.astype(np.int64), tiles_x


def rasterize(means, quats, scales, opacities, sh, cam: Camera, target: RenderTarget,
              cfg: RenderConfig = DEFAULT_CONFIG) -> RasterState:
    """Forward pass on raw arrays; returns the state needed by rasterize_backward."""
    means = np.ascontiguousarray(means)
    dtype = means.dtype
    if dtype.kind != "f":
        dtype = np.dtype(np.float64)
        means = means.astype(dtype)
    quats, scales, opacities, sh = (np.ascontiguousarray(a, dtype=dtype) for a in (quats, scales, opacities, sh))
    if target.width != cam.width or target.height != cam.height:
        raise RenderContractError(f"target {target.width}x{target.height} does not match camera "
                                  f"{cam.width}x{cam.height}")
    proj = project(means, quats, scales, sh, cam, near=cfg.near, dilation=cfg.dilation,
                   cutoff_sigma=cfg.cutoff_sigma)
    ranges, entry_ids, tiles_x = _bin_tiles(proj, target.width, target.height, cfg.tile_size)
    h, w = target.height, target.width
    raw = np.empty((h, w, 3), dtype=dtype)
    trans = np.empty((h, w), dtype=dtype)
    end = np.empty((h, w), dtype=np.int64)
    depth = np.empty((h, w), dtype=dtype)
    bg = np.asarray(target.background, dtype=dtype)
    kernels.composite_forward(ranges, entry_ids, proj.means2d, proj.conics, opacities, proj.colors,
                              proj.depths, bg, w, h, cfg.tile_size, tiles_x,
                              float(cfg.cutoff_sigma) ** 2, float(cfg.transmittance_min), float(cfg.far),
                              raw, trans, end, depth)
    return RasterState(cam, target, cfg, proj, opacities, ranges, entry_ids, tiles_x, raw, end, trans,
                       depth, means.shape[0])


def rasterize_backward(state: RasterState, grad_image) -> SplatGradients:
    grad_image = np.asarray(grad_image)
    h, w = state.target.height, state.target.width
    if grad_image.shape != (h, w, 3):
        raise RenderContractError(f"image gradient shape {grad_image.shape} does not match the "
                                  f"forward pass output {(h, w, 3)}")
    dtype = state.raw.dtype
    # the output clamp passes gradient only inside [0, 1]
    inside = (state.raw >= 0) & (state.raw <= 1)
    g_img = np.ascontiguousarray(np.where(inside, grad_image, 0), dtype=dtype)
    n_entries = state.entry_ids.shape[0]
    g_entries = np.zeros((n_entries, kernels.N_GRAD_SLOTS), dtype=dtype)
    proj = state.proj
    kernels.composite_backward(state.tile_ranges, state.entry_ids, proj.means2d, proj.conics,
                               state.opacities, proj.colors, np.asarray(state.target.background, dtype=dtype),
                               w, h, state.cfg.tile_size, state.tiles_x, float(state.cfg.cutoff_sigma) ** 2,
                               state.end, g_img, g_entries)
    n = state.n_gaussians
    per_gauss = np.zeros((n, kernels.N_GRAD_SLOTS), dtype=dtype)
    # sequential reduction in entry order keeps the result reproducible
    np.add.at(per_gauss, state.entry_ids, g_entries)
    g_means2d = per_gauss[:, [kernels.G_U, kernels.G_V]]
    g_conics = per_gauss[:, [kernels.G_A, kernels.G_B, kernels.G_C]]
    g_colors = per_gauss[:, [kernels.G_R, kernels.G_G, kernels.G_BL]]
    g_opac = per_gauss[:, kernels.G_OPAC].copy()
    g_means, g_quats, g_scales, g_sh = project_backward(proj, state.cam, g_means2d, g_conics, g_colors)
    g_opac = np.where(proj.valid, g_opac, 0)
    return SplatGradients(g_means, g_opac, g_quats, g_scales, g_sh)


def _scene_arrays(scene: GaussianScene, dtype=None):
    dt = dtype or scene.dtype
    return tuple(np.asarray(a, dtype=dt) for a in
                 (scene.centers, scene.rotations, scene.scales, scene.opacities, scene.sh))


def render(scene: GaussianScene, cam: Camera, target: RenderTarget | None = None,
           cfg: RenderConfig = DEFAULT_CONFIG, dtype=None) -> np.ndarray:
    """Composite ``scene`` into an (H, W, 3) image clamped to [0, 1]."""
    target = target or RenderTarget.for_camera(cam)
    if len(scene) == 0:
        dt = dtype or scene.dtype
        return np.broadcast_to(np.asarray(target.background, dtype=dt),
                               (target.height, target.width, 3)).copy()
    m, q, s, o, sh = _scene_arrays(scene, dtype)
    return rasterize(m, q, s, o, sh, cam, target, cfg).image


def render_backward(scene: GaussianScene, cam: Camera, target: RenderTarget | None, grad_image,
                    cfg: RenderConfig = DEFAULT_CONFIG, dtype=None) -> SplatGradients:
    """Gradients of a scalar loss w.r.t. every primitive parameter given dL/dimage."""
    target = target or RenderTarget.for_camera(cam)
    grad_image = np.asarray(grad_image)
    if grad_image.shape != (target.height, target.width, 3):
        raise RenderContractError(f"image gradient shape {grad_image.shape} does not match the "
                                  f"forward pass output {(target.height, target.width, 3)}")
    m, q, s, o, sh = _scene_arrays(scene, dtype)
    state = rasterize(m, q, s, o, sh, cam, target, cfg)
    return rasterize_backward(state, grad_image)


def render_depth(scene: GaussianScene, cam: Camera, target: RenderTarget | None = None,
                 cfg: RenderConfig = DEFAULT_CONFIG, dtype=None) -> np.ndarray:
    """Expected camera-space depth per pixel; uncovered transmittance sees ``cfg.far``."""
    target = target or RenderTarget.for_camera(cam)
    if len(scene) == 0:
        return np.full((target.height, target.width), cfg.far, dtype=dtype or scene.dtype)
    m, q, s, o, sh = _scene_arrays(scene, dtype)
    return rasterize(m, q, s, o, sh, cam, target, cfg).depth


def accumulated_alpha(scene: GaussianScene, cam: Camera, target: RenderTarget | None = None,
                      cfg: RenderConfig = DEFAULT_CONFIG) -> np.ndarray:
    target = target or RenderTarget.for_camera(cam)
    if len(scene) == 0:
        return np.zeros((target.height, target.width), dtype=scene.dtype)
    m, q, s, o, sh = _scene_arrays(scene)
    return 1.0 - rasterize(m, q, s, o, sh, cam, target, cfg).transmittance
