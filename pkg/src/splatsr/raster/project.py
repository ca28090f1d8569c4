"""Per-Gaussian projection: screen means, EWA conics, view-dependent colors.

Forward and hand-derived backward, vectorized over Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Camera
from ..scene import SH_C0, SH_C1


@dataclass
class Projection:
    means2d: np.ndarray   # (N, 2)
    conics: np.ndarray    # (N, 3) inverse 2D covariance (A, B, C)
    colors: np.ndarray    # (N, 3)
    depths: np.ndarray    # (N,) camera-space z
    radii: np.ndarray     # (N,) int pixel radius, 0 when culled
    # saved for backward
    tc: np.ndarray
    J: np.ndarray
    T: np.ndarray
    cov3: np.ndarray
    cov2: np.ndarray
    rot: np.ndarray
    qn: np.ndarray
    qnorm: np.ndarray
    scales: np.ndarray
    dirs: np.ndarray
    dir_norm: np.ndarray
    sh: np.ndarray
    valid: np.ndarray


def quat_to_rot(qn: np.ndarray) -> np.ndarray:
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    R = np.empty((qn.shape[0], 3, 3), dtype=qn.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rot_backward(qn: np.ndarray, gR: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the (already normalized) quaternion given dL/dR."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = gR
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2]
              - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=1)


def _sh_colors(sh: np.ndarray, d: np.ndarray) -> np.ndarray:
    col = SH_C0 * sh[:, 0, :]
    if sh.shape[1] > 1:
        col = col - SH_C1 * d[:, 1:2] * sh[:, 1, :] + SH_C1 * d[:, 2:3] * sh[:, 2, :] \
            - SH_C1 * d[:, 0:1] * sh[:, 3, :]
    return col


def project(means, quats, scales, sh, cam: Camera, *, near: float, dilation: float,
            cutoff_sigma: float) -> Projection:
    dtype = means.dtype
    n = means.shape[0]
    W = cam.R.astype(dtype)
    tc = means @ W.T + cam.t.astype(dtype)
    x, y, z = tc[:, 0], tc[:, 1], tc[:, 2]
    valid = z > near
    zs = np.where(valid, z, dtype.type(1))
    fx, fy = dtype.type(cam.fx), dtype.type(cam.fy)
    u = fx * x / zs + dtype.type(cam.cx)
    v = fy * y / zs + dtype.type(cam.cy)

    J = np.zeros((n, 2, 3), dtype=dtype)
    J[:, 0, 0] = fx / zs
    J[:, 0, 2] = -fx * x / (zs * zs)
    J[:, 1, 1] = fy / zs
    J[:, 1, 2] = -fy * y / (zs * zs)

    qnorm = np.linalg.norm(quats, axis=1, keepdims=True)
    qn = quats / qnorm
    rot = quat_to_rot(qn)
    M = rot * scales[:, None, :]
    cov3 = M @ M.transpose(0, 2, 1)
    T = J @ W
    cov2 = T @ cov3 @ T.transpose(0, 2, 1)
    cov2[:, 0, 0] += dtype.type(dilation)
    cov2[:, 1, 1] += dtype.type(dilation)
    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    valid &= det > 0
    det_s = np.where(valid, det, dtype.type(1))
    conics = np.stack([c / det_s, -b / det_s, a / det_s], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(dtype.type(0.1), mid * mid - det))
    radii = np.where(valid, np.ceil(cutoff_sigma * np.sqrt(np.maximum(lam, 0))), 0).astype(np.int64)

    dirs = means - cam.center.astype(dtype)
    dir_norm = np.linalg.norm(dirs, axis=1, keepdims=True)
    dir_norm = np.where(dir_norm > 0, dir_norm, dtype.type(1))
    d = dirs / dir_norm
    colors = _sh_colors(sh, d)

    return Projection(np.stack([u, v], axis=1), conics, colors, z, radii,
                      tc, J, T, cov3, cov2, rot, qn, qnorm, scales, d, dir_norm, sh, valid)


def project_backward(p: Projection, cam: Camera, g_means2d, g_conics, g_colors):
    """Chain per-Gaussian screen-space gradients back to scene parameters.

    Returns (g_means, g_quats, g_scales, g_sh).
    """
    dtype = p.tc.dtype
    valid = p.valid[:, None]
    g_means2d = np.where(valid, g_means2d, 0)
    g_conics = np.where(valid, g_conics, 0)
    g_colors = np.where(valid, g_colors, 0)

    # colors -> SH coefficients and viewing direction
    d = p.dirs
    g_sh = np.zeros_like(p.sh)
    g_sh[:, 0, :] = SH_C0 * g_colors
    g_means = np.zeros_like(p.tc)
    if p.sh.shape[1] > 1:
        g_sh[:, 1, :] = -SH_C1 * d[:, 1:2] * g_colors
        g_sh[:, 2, :] = SH_C1 * d[:, 2:3] * g_colors
        g_sh[:, 3, :] = -SH_C1 * d[:, 0:1] * g_colors
        g_d = np.stack([
            -SH_C1 * np.sum(g_colors * p.sh[:, 3, :], axis=1),
            -SH_C1 * np.sum(g_colors * p.sh[:, 1, :], axis=1),
            SH_C1 * np.sum(g_colors * p.sh[:, 2, :], axis=1),
        ], axis=1)
        g_means += (g_d - d * np.sum(d * g_d, axis=1, keepdims=True)) / p.dir_norm

    # conic -> 2D covariance: dL/dS = -S^-1 G S^-1 with G the symmetric gradient
    inv = np.empty_like(p.cov2)
    inv[:, 0, 0] = p.conics[:, 0]
    inv[:, 0, 1] = inv[:, 1, 0] = p.conics[:, 1]
    inv[:, 1, 1] = p.conics[:, 2]
    G = np.empty_like(p.cov2)
    G[:, 0, 0] = g_conics[:, 0]
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * g_conics[:, 1]
    G[:, 1, 1] = g_conics[:, 2]
    g_cov2 = -inv @ G @ inv

    # cov2 = T cov3 T^T, T = J W
    g_T = 2 * g_cov2 @ p.T @ p.cov3
    g_cov3 = p.T.transpose(0, 2, 1) @ g_cov2 @ p.T
    W = cam.R.astype(dtype)
    g_J = g_T @ W.T

    x, y, z = p.tc[:, 0], p.tc[:, 1], p.tc[:, 2]
    z = np.where(p.valid, z, dtype.type(1))
    fx, fy = dtype.type(cam.fx), dtype.type(cam.fy)
    z2, z3 = z * z, z * z * z
    gu, gv = g_means2d[:, 0], g_means2d[:, 1]
    g_x = gu * fx / z - g_J[:, 0, 2] * fx / z2
    g_y = gv * fy / z - g_J[:, 1, 2] * fy / z2
    g_z = (-gu * fx * x / z2 - gv * fy * y / z2
           - g_J[:, 0, 0] * fx / z2 + g_J[:, 0, 2] * 2 * fx * x / z3
           - g_J[:, 1, 1] * fy / z2 + g_J[:, 1, 2] * 2 * fy * y / z3)
    g_tc = np.stack([g_x, g_y, g_z], axis=1)
    g_means += g_tc @ W

    # cov3 = M M^T, M = R diag(s)
    M = p.rot * p.scales[:, None, :]
    g_M = 2 * g_cov3 @ M
    g_scales = np.sum(p.rot * g_M, axis=1)
    g_rot = g_M * p.scales[:, None, :]
    g_qn = rot_backward(p.qn, g_rot)
    g_quats = (g_qn - p.qn * np.sum(p.qn * g_qn, axis=1, keepdims=True)) / p.qnorm

    keep = p.valid[:, None]
    return (np.where(keep, g_means, 0), np.where(keep, g_quats, 0), np.where(keep, g_scales, 0),
            np.where(p.valid[:, None, None], g_sh, 0))
