"""Architecture hyperparameters and ablation switches of the mapping network."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    patch_size: int = 16
    embed_dim: int = 128
    heads: int = 4
    enc_depth: int = 4
    dec_depth: int = 4
    point_blocks: int = 2
    knn: int = 16
    mlp_ratio: int = 4
    backbone_dim: int = 64
    rpe_hidden: int = 32
    sh_degree: int = 1
    # offset caps: position cap is pos_cap_mult x median nearest-neighbour distance
    pos_cap_mult: float = 2.0
    log_scale_cap: float = math.log(4.0)
    raw_compose: bool = False
    # ablation switches
    use_refine: bool = True
    use_offsets: bool = True
    use_point_blocks: bool = True
    use_cross_view: bool = True

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if self.embed_dim % 4:
            raise ConfigError(f"embed_dim {self.embed_dim} must be a multiple of 4 for 2D position encoding")
        for name in ("patch_size", "embed_dim", "heads", "mlp_ratio", "backbone_dim", "knn", "rpe_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("enc_depth", "dec_depth", "point_blocks"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.sh_degree not in (0, 1):
            raise ConfigError(f"sh_degree must be 0 or 1, got {self.sh_degree}")
        if self.pos_cap_mult <= 0 or self.log_scale_cap <= 0:
            raise ConfigError("offset caps must be positive")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def n_sh(self) -> int:
        return (self.sh_degree + 1) ** 2

    @property
    def offset_dim(self) -> int:
        """3 (center) + 1 (opacity logit) + 4 (rotation) + 3 (log scale) + 3K (color)."""
        return 3 + 1 + 4 + 3 + 3 * self.n_sh

    def as_dict(self) -> dict:
        return asdict(self)
