"""Per-Gaussian feature lookup in the source view's decoded token grid."""

from __future__ import annotations

import numpy as np

from .. import tensor as F
from ..camera import NEAR_DEPTH, Camera, project_points
from ..tensor import Tensor
from .grid import TokenGrid

OUT_OF_VIEW = -1


def patch_index(cam: Camera, means: np.ndarray, patch: int) -> np.ndarray:
    """Row-major token index of the patch containing each projected center, or -1.

    Pixel i spans [i - 0.5, i + 0.5), so the column is floor((u + 0.5) / patch).
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    uv, depth = project_points(cam, means)
    cols, rows = cam.width // patch, cam.height // patch
    with np.errstate(invalid="ignore"):
        c = np.floor((uv[:, 0] + 0.5) / patch)
        r = np.floor((uv[:, 1] + 0.5) / patch)
    ok = (depth > NEAR_DEPTH) & np.isfinite(c) & np.isfinite(r)
    ok &= (c >= 0) & (c < cols) & (r >= 0) & (r < rows)
    idx = np.full(means.shape[0], OUT_OF_VIEW, dtype=np.int64)
    idx[ok] = (r[ok] * cols + c[ok]).astype(np.int64)
    return idx


def feature_rows(means: np.ndarray, source_view: np.ndarray, cams: list[Camera],
                 grids: list[TokenGrid]) -> np.ndarray:
    """Row of each Gaussian in the stacked table [grid_0; grid_1; ...; sentinel]."""
    source_view = np.asarray(source_view, dtype=np.int64)
    rows = np.empty(source_view.shape[0], dtype=np.int64)
    offset = 0
    total = sum(g.rows * g.cols for g in grids)
    for v, (cam, g) in enumerate(zip(cams, grids)):
        sel = np.nonzero(source_view == v)[0]
        idx = patch_index(cam, means[sel], g.patch_size)
        rows[sel] = np.where(idx >= 0, idx + offset, total)
        offset += g.rows * g.cols
    if np.any((source_view < 0) | (source_view >= len(grids))):
        raise ValueError("source_view refers to a view without a token grid")
    return rows


def query_features(means: np.ndarray, source_view: np.ndarray, cams: list[Camera],
                   grids: list[TokenGrid], out_of_view: Tensor) -> Tensor:
    """F_i: the source-view token under each projected center; a learned token when unseen."""
    table = F.concat([g.tokens for g in grids] + [F.reshape(out_of_view, (1, -1))], axis=0)
    return F.gather(table, feature_rows(means, source_view, cams, grids))
