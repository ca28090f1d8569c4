"""Pinhole cameras: projection of points, pixel rays and the camera text format.

Pixel convention: (0, 0) is the center of the top-left pixel, u grows to the
right and v grows downward. Extrinsics map world to camera coordinates,
x_cam = R @ x_world + t, with the camera looking down +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class CameraError(ValueError):
    pass


class BehindCameraError(CameraError):
    pass


NEAR_DEPTH = 1e-8


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    width: int = 0
    height: int = 0

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise CameraError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise CameraError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
            raise CameraError("extrinsic rotation is not orthonormal with det +1")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def P(self) -> np.ndarray:
        """3x4 world-to-camera extrinsic matrix [R | t]."""
        return np.hstack([self.R, self.t[:, None]])

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def intrinsics_vector(self) -> np.ndarray:
        """(fx/W, fy/H, cx/W, cy/H): resolution-independent intrinsics."""
        return np.array([self.fx / self.width, self.fy / self.height,
                         self.cx / self.width, self.cy / self.height])

    def scaled(self, factor: float) -> "Camera":
        """Same pose with the image resized by ``factor`` (0.25 gives the LR camera).

        With pixel centers at integer coordinates the principal point maps as
        c' = (c + 0.5) * factor - 0.5.
        """
        w = int(round(self.width * factor))
        h = int(round(self.height * factor))
        return Camera(self.fx * factor, self.fy * factor,
                      (self.cx + 0.5) * factor - 0.5, (self.cy + 0.5) * factor - 0.5,
                      self.R, self.t, w, h)

    @staticmethod
    def look_at(eye, target, up, fx, fy, cx, cy, width, height) -> "Camera":
        eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            raise CameraError("up vector is parallel to the viewing direction")
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return Camera(fx, fy, cx, cy, R, -R @ eye, width, height)

    @staticmethod
    def from_fov(eye, target, up, fov_x_deg: float, width: int, height: int) -> "Camera":
        f = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2)
        return Camera.look_at(eye, target, up, f, f, (width - 1) / 2, (height - 1) / 2, width, height)


def project_center(cam: Camera, mu) -> tuple[np.ndarray, float]:
    """Project one world point; returns ((u, v), depth).

    Homogeneous p = K [R|t] [mu; 1] followed by division by its last entry.
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(3)
    p = cam.K @ (cam.P @ np.append(mu, 1.0))
    if p[2] <= NEAR_DEPTH:
        raise BehindCameraError(f"point {mu.tolist()} is at or behind the camera (depth {p[2]:.3g})")
    return p[:2] / p[2], float(p[2])


def project_points(cam: Camera, mu) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection: (N,2) pixels and (N,) depths; no behind-camera check."""
    mu = np.asarray(mu)
    dtype = mu.dtype if mu.dtype.kind == "f" else np.float64
    R = cam.R.astype(dtype)
    xc = mu @ R.T + cam.t.astype(dtype)
    z = xc[:, 2]
    safe = np.where(z > NEAR_DEPTH, z, 1.0)
    uv = np.stack([cam.fx * xc[:, 0] / safe + cam.cx, cam.fy * xc[:, 1] / safe + cam.cy], axis=1)
    return uv.astype(dtype), z


def pixel_ray(cam: Camera, u: float, v: float) -> tuple[np.ndarray, np.ndarray]:
    """World-frame (origin, unit direction) of the ray through pixel (u, v)."""
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d = cam.R.T @ d_cam
    return cam.center, d / np.linalg.norm(d)


def pixel_rays(cam: Camera, u, v) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pixel_ray over arrays of pixel coordinates; directions (..., 3)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    d = d_cam @ cam.R
    return cam.center, d / np.linalg.norm(d, axis=-1, keepdims=True)


def unproject_depth(cam: Camera, depth: np.ndarray) -> np.ndarray:
    """World points for every pixel given a z-depth map of shape (H, W)."""
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    d_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    pts_cam = d_cam * depth[..., None]
    return (pts_cam - cam.t) @ cam.R


# --- camera text file -----------------------------------------------------

def format_camera(cam: Camera) -> str:
    vals = [cam.fx, cam.fy, cam.cx, cam.cy, *cam.R.reshape(-1), *cam.t]
    return " ".join(repr(float(x)) for x in vals) + f" {cam.width} {cam.height}"


def parse_camera(line: str, lineno: int = 0) -> Camera:
    tok = line.split()
    if len(tok) != 18:
        raise CameraError(f"camera record {lineno}: expected 18 fields (16 floats + width height), got {len(tok)}")
    try:
        vals = [float(x) for x in tok[:16]]
        width, height = int(tok[16]), int(tok[17])
    except ValueError as exc:
        raise CameraError(f"camera record {lineno}: {exc}") from None
    if not all(math.isfinite(x) for x in vals):
        raise CameraError(f"camera record {lineno}: non-finite value")
    try:
        return Camera(vals[0], vals[1], vals[2], vals[3], np.array(vals[4:13]).reshape(3, 3),
                      np.array(vals[13:16]), width, height)
    except CameraError as exc:
        raise CameraError(f"camera record {lineno}: {exc}") from None


def save_cameras(cams: list[Camera], path) -> None:
    with open(path, "w") as fh:
        for cam in cams:
            fh.write(format_camera(cam) + "\n")


def load_cameras(path) -> list[Camera]:
    cams = []
    with open(path) as fh:
        for i, line in enumerate(l for l in fh if l.strip() and not l.lstrip().startswith("#")):
            cams.append(parse_camera(line, i))
    return cams
