"""Run configuration: a flat ``key = value`` text file.

Every hyperparameter, switch, seed and path lives here. Unknown keys are
rejected. All randomness derives from ``seed`` through numbered streams (see
``stream_rng``).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..densify import DensifyConfig
from ..model.config import NetworkConfig
from ..raster import RenderConfig
from .backbone import BackboneConfig
from .losses import LossWeights
from .synthetic import SyntheticSceneSpec

# Random streams: np.random.SeedSequence([seed, stream, *extra]).
STREAM_TRAIN_SCENES = 1
STREAM_EVAL_SCENES = 2
STREAM_BACKBONE_INIT = 3
STREAM_NETWORK_INIT = 4
STREAM_BATCHES = 5
STREAM_BACKBONE_BATCHES = 6

THREADS_ENV = "SPLATSR_NUM_THREADS"


class RunConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # data
    train_scenes: int = 16
    eval_scenes: int = 4
    hr_size: int = 256
    factor: int = 4
    camera_count: int = 5
    min_gaussians: int = 1200
    max_gaussians: int = 2000
    lr_filter: str = "area"
    upsampler: str = "bicubic"
    # densification
    beta: float = 0.5
    opacity_threshold: float = 0.5
    scale_shrink: float = 0.25
    # network
    patch_size: int = 16
    embed_dim: int = 128
    heads: int = 4
    enc_depth: int = 4
    dec_depth: int = 4
    point_blocks: int = 2
    knn: int = 16
    mlp_ratio: int = 4
    rpe_hidden: int = 32
    sh_degree: int = 1
    pos_cap_mult: float = 2.0
    log_scale_cap: float = math.log(4.0)
    raw_compose: bool = False
    use_refine: bool = True
    use_offsets: bool = True
    use_point_blocks: bool = True
    use_cross_view: bool = True
    # backbone
    backbone_dim: int = 64
    backbone_heads: int = 2
    backbone_depth: int = 1
    backbone_steps: int = 300
    backbone_lr: float = 1e-3
    backbone_novel_weight: float = 0.0
    # optimization
    steps: int = 5000
    batch: int = 2
    lr: float = 2.5e-5
    w_mse: float = 1.0
    w_perc: float = 0.05
    log_interval: int = 50
    checkpoint_interval: int = 1000
    # renderer
    tile_size: int = 16
    cutoff_sigma: float = 3.0
    transmittance_min: float = 1e-4
    dilation: float = 0.3
    near: float = 0.01
    far: float = 100.0
    # paths
    out_dir: str = "runs/default"
    backbone_checkpoint: str = ""
    checkpoint: str = ""

    # -- derived configs --------------------------------------------------
    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            patch_size=self.patch_size, embed_dim=self.embed_dim, heads=self.heads,
            enc_depth=self.enc_depth, dec_depth=self.dec_depth, point_blocks=self.point_blocks,
            knn=self.knn, mlp_ratio=self.mlp_ratio, backbone_dim=self.backbone_dim,
            rpe_hidden=self.rpe_hidden, sh_degree=self.sh_degree, pos_cap_mult=self.pos_cap_mult,
            log_scale_cap=self.log_scale_cap, raw_compose=self.raw_compose, use_refine=self.use_refine,
            use_offsets=self.use_offsets, use_point_blocks=self.use_point_blocks,
            use_cross_view=self.use_cross_view)

    def backbone_config(self) -> BackboneConfig:
        if self.patch_size % self.factor:
            raise RunConfigError(f"patch_size {self.patch_size} must be a multiple of factor {self.factor}")
        return BackboneConfig(patch_size=self.patch_size // self.factor, dim=self.backbone_dim,
                              heads=self.backbone_heads, depth=self.backbone_depth, sh_degree=self.sh_degree)

    def densify_config(self) -> DensifyConfig:
        return DensifyConfig(self.beta, self.opacity_threshold, self.scale_shrink)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_mse, self.w_perc)

    def render_config(self) -> RenderConfig:
        return RenderConfig(self.tile_size, self.cutoff_sigma, self.transmittance_min, self.dilation,
                            self.near, self.far)

    def scene_spec(self, split: str, index: int) -> SyntheticSceneSpec:
        stream = {"train": STREAM_TRAIN_SCENES, "eval": STREAM_EVAL_SCENES}[split]
        scene_seed = int(np.random.SeedSequence([self.seed, stream, index]).generate_state(1)[0])
        return SyntheticSceneSpec(seed=scene_seed, min_gaussians=self.min_gaussians,
                                  max_gaussians=self.max_gaussians, camera_count=self.camera_count,
                                  image_size=self.hr_size, sh_degree=self.sh_degree)

    def validate(self) -> None:
        if self.hr_size % self.factor or (self.hr_size // self.factor) % (self.patch_size // self.factor or 1):
            raise RunConfigError(f"hr_size {self.hr_size} must be divisible by factor {self.factor} "
                                 f"and patch_size {self.patch_size}")
        if self.hr_size % self.patch_size:
            raise RunConfigError(f"hr_size {self.hr_size} is not divisible by patch_size {self.patch_size}")
        if self.lr_filter not in ("area", "lanczos"):
            raise RunConfigError(f"lr_filter must be 'area' or 'lanczos', got {self.lr_filter!r}")
        if self.upsampler not in ("nearest", "bilinear", "bicubic"):
            raise RunConfigError(f"unknown upsampler {self.upsampler!r}")
        for name in ("train_scenes", "eval_scenes", "batch", "log_interval", "factor"):
            if getattr(self, name) < 1:
                raise RunConfigError(f"{name} must be positive")
        if self.steps < 0:
            raise RunConfigError("steps must be non-negative")
        if self.batch > self.train_scenes:
            raise RunConfigError(f"batch {self.batch} exceeds train_scenes {self.train_scenes}")
        self.network_config()
        self.backbone_config()
        self.densify_config()
        self.loss_weights()

    # -- text form ----------------------------------------------------------
    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def field_type(cls, key: str) -> type:
        return type(getattr(cls(), key))

    def set(self, key: str, value: str) -> None:
        if key not in self.keys():
            raise RunConfigError(f"unknown config key {key!r}")
        setattr(self, key, parse_value(self.field_type(key), value, key))

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(getattr(self, k))}\n" for k in self.keys())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise RunConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except RunConfigError as exc:
                raise RunConfigError(f"{source}:{lineno}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise RunConfigError(f"config file {path} does not exist")
        return cls.from_text(p.read_text(), str(path))

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def parse_value(kind: type, value: str, key: str = ""):
    try:
        if kind is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise RunConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def stream_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, *extra]))
