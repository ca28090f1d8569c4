"""Shuffle split densification: six axis-aligned children per opaque Gaussian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import GaussianScene, quaternion_to_rotation

# Child order within a parent: +x, -x, +y, -y, +z, -z (local principal axes).
SPLIT_AXES = np.array([0, 0, 1, 1, 2, 2])
SPLIT_SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


@dataclass(frozen=True)
class DensifyConfig:
    beta: float = 0.5
    opacity_threshold: float = 0.5
    scale_shrink: float = 0.25

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.scale_shrink <= 1:
            raise ValueError(f"scale_shrink must lie in (0, 1], got {self.scale_shrink}")
        if not 0 <= self.opacity_threshold <= 1:
            raise ValueError(f"opacity_threshold must lie in [0, 1], got {self.opacity_threshold}")


def shuffle_split(scene: GaussianScene, cfg: DensifyConfig = DensifyConfig()
                  ) -> tuple[GaussianScene, np.ndarray]:
    """Split every primitive with opacity above the threshold into six children.

    Child k of parent j sits at mu_j + beta * R_j (e_k * s_j) and keeps the
    parent's rotation, opacity and SH; its scale along the offset axis is
    multiplied by ``scale_shrink``. Primitives at or below the threshold are
    copied unchanged. Output is parent-major and ``parent_index`` maps each
    output back to its source primitive.
    """
    n = len(scene)
    split = scene.opacities > cfg.opacity_threshold
    counts = np.where(split, 6, 1)
    parent_index = np.repeat(np.arange(n), counts)
    # position of each output within its parent's group
    starts = np.cumsum(counts) - counts
    slot = np.arange(parent_index.shape[0]) - starts[parent_index]
    is_child = split[parent_index]

    dtype = scene.dtype
    centers = scene.centers[parent_index].copy()
    scales = scene.scales[parent_index].copy()
    if is_child.any():
        child_parent = parent_index[is_child]
        axis = SPLIT_AXES[slot[is_child]]
        sign = SPLIT_SIGNS[slot[is_child]].astype(dtype)
        rots = quaternion_to_rotation(scene.rotations[child_parent])
        rows = np.arange(child_parent.shape[0])
        parent_scale = scene.scales[child_parent]
        # R_j (e_k * s_j) is the axis column of R_j times the signed scale on that axis
        offset = rots[rows, :, axis] * (sign * parent_scale[rows, axis])[:, None]
        centers[is_child] = scene.centers[child_parent] + dtype.type(cfg.beta) * offset
        shrunk = scales[is_child]
        shrunk[rows, axis] = parent_scale[rows, axis] * dtype.type(cfg.scale_shrink)
        scales[is_child] = shrunk

    dense = GaussianScene(centers, scene.opacities[parent_index], scene.rotations[parent_index],
                          scales, scene.sh[parent_index], sh_degree=scene.sh_degree, dtype=dtype,
                          validate=False)
    return dense, parent_index


def expected_count(scene: GaussianScene, cfg: DensifyConfig = DensifyConfig()) -> int:
    split = int(np.count_nonzero(scene.opacities > cfg.opacity_threshold))
    return 6 * split + (len(scene) - split)


def save_parent_index(parent_index: np.ndarray, path) -> None:
    np.savetxt(path, parent_index, fmt="%d")


def load_parent_index(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.int64, ndmin=1)
