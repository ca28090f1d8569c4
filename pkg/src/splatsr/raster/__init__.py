"""Differentiable Gaussian splatting renderer."""

from .imageio import load_png, load_raw, save_png, save_raw
from .render import (
    DEFAULT_CONFIG,
    RasterState,
    RenderConfig,
    RenderContractError,
    RenderTarget,
    SplatGradients,
    accumulated_alpha,
    rasterize,
    rasterize_backward,
    render,
    render_backward,
    render_depth,
)

__all__ = [
    "DEFAULT_CONFIG", "RasterState", "RenderConfig", "RenderContractError", "RenderTarget",
    "SplatGradients", "accumulated_alpha", "load_png", "load_raw", "rasterize", "rasterize_backward",
    "render", "render_backward", "render_depth", "save_png", "save_raw",
]
