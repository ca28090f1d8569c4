"""The rasterizer as a node on the gradient tape."""

from __future__ import annotations

import numpy as np

from ..camera import Camera
from ..raster import DEFAULT_CONFIG, RenderConfig, RenderTarget, rasterize, rasterize_backward
from ..tensor import Tensor, make_node


def render_tensor(means: Tensor, quats: Tensor, scales: Tensor, opacities: Tensor, sh: Tensor,
                  cam: Camera, target: RenderTarget | None = None,
                  cfg: RenderConfig = DEFAULT_CONFIG) -> Tensor:
    """(H, W, 3) image whose backward calls the analytic splat gradients."""
    target = target or RenderTarget.for_camera(cam)
    dt = means.dtype
    if means.shape[0] == 0:
        img = np.broadcast_to(np.asarray(target.background, dtype=dt), (target.height, target.width, 3))
        return Tensor(img.copy())
    state = rasterize(means.data, quats.data, scales.data, opacities.data, sh.data, cam, target, cfg)

    def backward(g):
        sg = rasterize_backward(state, g)
        return (sg.means.astype(dt), sg.rotations.astype(dt), sg.scales.astype(dt),
                sg.opacities.astype(dt), sg.sh.astype(dt))
    return make_node(state.image.astype(dt), (means, quats, scales, opacities, sh), backward, "render")
