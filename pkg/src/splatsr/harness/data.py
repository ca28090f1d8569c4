"""Training samples: LR inputs, HR targets and oracle depth for one synthetic scene."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..camera import Camera
from ..raster import RenderConfig, RenderTarget, rasterize, render
from ..scene import GaussianScene
from .imaging import area_downsample, lanczos_downsample
from .synthetic import SyntheticSceneSpec, generate_scene


@dataclass
class TrainSample:
    scene_seed: int
    lr_images: list[np.ndarray]          # 2 x (h, w, 3)
    lr_cams: list[Camera]
    lr_depths: list[np.ndarray]          # 2 x (h, w)
    input_cams: list[Camera]             # HR cameras of the input views
    targets: list[np.ndarray]            # T x (H, W, 3)
    target_cams: list[Camera]
    lr_targets: list[np.ndarray] = field(default_factory=list)
    gt: GaussianScene | None = None

    @property
    def factor(self) -> int:
        return self.input_cams[0].width // self.lr_cams[0].width


def oracle_depth(gt: GaussianScene, cam: Camera, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Alpha-normalized expected depth; nearly uncovered pixels take the farthest covered depth."""
    st = rasterize(gt.centers, gt.rotations, gt.scales, gt.opacities, gt.sh, cam,
                   RenderTarget.for_camera(cam), cfg)
    cover = 1.0 - st.transmittance
    ok = cover > 0.5
    with np.errstate(invalid="ignore", divide="ignore"):
        d = (st.depth - st.transmittance * cfg.far) / cover
    fill = d[ok].max() if ok.any() else 1.0
    return np.where(ok, d, fill).astype(np.float32)


def input_target_split(n_cams: int) -> tuple[list[int], list[int]]:
    """Inputs are the two ends of the camera arc; targets are the cameras between them."""
    if n_cams < 3:
        raise ValueError(f"need at least 3 cameras (2 inputs + 1 target), got {n_cams}")
    return [0, n_cams - 1], list(range(1, n_cams - 1))


def build_sample(spec: SyntheticSceneSpec, factor: int = 4, lr_filter: str = "area",
                 cfg: RenderConfig = RenderConfig()) -> TrainSample:
    gt, cams = generate_scene(spec)
    inputs, targets = input_target_split(len(cams))
    hr = [render(gt, c, cfg=cfg) for c in cams]
    down = area_downsample if lr_filter == "area" else lanczos_downsample
    if lr_filter not in ("area", "lanczos"):
        raise ValueError(f"unknown LR filter {lr_filter!r}")
    lr_cams = [cams[i].scaled(1.0 / factor) for i in inputs]
    lr_images = [down(hr[i], factor) for i in inputs]
    lr_depths = [oracle_depth(gt, c, cfg) for c in lr_cams]
    return TrainSample(spec.seed, lr_images, lr_cams, lr_depths, [cams[i] for i in inputs],
                       [hr[i] for i in targets], [cams[i] for i in targets],
                       [down(hr[i], factor) for i in targets], gt)
