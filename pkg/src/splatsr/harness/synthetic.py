"""Procedural scenes: checker-textured spheres and boxes on a ground plane,
sampled into flat surface Gaussians, viewed by cameras on a ring arc."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..camera import Camera
from ..scene import SH_C0, GaussianScene, num_sh_bases, rotation_to_quaternion


class SpecError(ValueError):
    pass


SHAPES = ("sphere", "box")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    seed: int = 0
    min_gaussians: int = 1200
    max_gaussians: int = 2000
    shapes: tuple = SHAPES
    n_objects: int = 3
    ground: bool = True
    ground_extent: float = 2.0          # half-size of the square ground plane
    checker_size: float = 0.3
    view_dependence: float = 0.05       # magnitude of the degree-1 SH coefficients
    camera_count: int = 5
    ring_radius: float = 1.2
    ring_height: float = 2.5
    arc_degrees: float = 60.0
    look_at_jitter: float = 0.1
    fov_degrees: float = 45.0
    image_size: int = 256
    sh_degree: int = 1

    def __post_init__(self):
        if self.min_gaussians < 1 or self.max_gaussians < self.min_gaussians:
            raise SpecError(f"primitive count range [{self.min_gaussians}, {self.max_gaussians}] is empty")
        if self.n_objects < 0 or (self.n_objects == 0 and not self.ground):
            raise SpecError("scene has no surfaces (no objects and no ground)")
        if self.n_objects and not self.shapes:
            raise SpecError("objects requested but the shape palette is empty")
        for s in self.shapes:
            if s not in SHAPES:
                raise SpecError(f"unknown shape {s!r}; palette is {SHAPES}")
        if self.camera_count < 1:
            raise SpecError("need at least one camera")
        if self.image_size < 1:
            raise SpecError("image size must be positive")


@dataclass(frozen=True)
class ShapeRecord:
    kind: str               # "plane", "sphere" or "box"
    center: np.ndarray
    size: np.ndarray        # plane: (half, half, 0); sphere: (r, r, r); box: half extents
    yaw: float
    colors: np.ndarray      # (2, 3) checker colors


def _frame_to_quat(t1, t2, n):
    rot = np.stack([t1, t2, n], axis=-1)     # columns are the local axes
    return rotation_to_quaternion(rot)


def scene_layout(spec: SyntheticSceneSpec) -> tuple[list[ShapeRecord], int]:
    """Shapes and the total primitive budget, fully determined by ``spec``."""
    rng = np.random.default_rng([spec.seed, 0])
    total = int(rng.integers(spec.min_gaussians, spec.max_gaussians + 1))
    shapes = []
    if spec.ground:
        shapes.append(ShapeRecord("plane", np.zeros(3), np.array([spec.ground_extent] * 2 + [0.0]), 0.0,
                                  rng.uniform(0.1, 0.9, size=(2, 3))))
    placed = []
    for _ in range(spec.n_objects):
        kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
        if kind == "sphere":
            size = np.full(3, rng.uniform(0.25, 0.45))
        else:
            size = rng.uniform(0.18, 0.35, size=3)
        r = float(size.max())
        for _attempt in range(50):
            xy = rng.uniform(-0.9, 0.9, size=2)
            if all(np.linalg.norm(xy - p) > r + q + 0.05 for p, q in placed):
                break
        placed.append((xy, r))
        center = np.array([xy[0], xy[1], size[2] if spec.ground else 0.0])
        shapes.append(ShapeRecord(kind, center, size, float(rng.uniform(0, 2 * math.pi)),
                                  rng.uniform(0.05, 0.95, size=(2, 3))))
    return shapes, total


def _area(shape: ShapeRecord) -> float:
    s = shape.size
    if shape.kind == "plane":
        return 4 * s[0] * s[1]
    if shape.kind == "sphere":
        return 4 * math.pi * s[0] ** 2
    return 8 * (s[0] * s[1] + s[1] * s[2] + s[0] * s[2])


def _sample_plane(rng, shape, n):
    half = shape.size[0]
    side = max(1, int(round(math.sqrt(n))))
    h = 2 * half / side
    g = (np.arange(side) + 0.5) * h - half
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(side * side)], axis=1)
    pts[:, :2] += rng.uniform(-0.25, 0.25, size=(pts.shape[0], 2)) * h
    normals = np.tile([0.0, 0.0, 1.0], (pts.shape[0], 1))
    t1 = np.tile([1.0, 0.0, 0.0], (pts.shape[0], 1))
    return pts + shape.center, normals, t1, h


def _sample_sphere(rng, shape, n):
    r = shape.size[0]
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = math.pi * (1 + 5 ** 0.5) * i + rng.uniform(0, 2 * math.pi)
    normals = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    ref = np.where(np.abs(normals[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    t1 = np.cross(ref, normals)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    h = math.sqrt(4 * math.pi * r * r / n)
    return shape.center + r * normals, normals, t1, h


def _sample_box(rng, shape, n):
    e = shape.size
    c, s = math.cos(shape.yaw), math.sin(shape.yaw)
    yaw = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    faces = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        for sign in (1.0, -1.0):
            faces.append((axis, sign, u, v, 4 * e[u] * e[v]))
    areas = np.array([f[4] for f in faces])
    counts = np.maximum(1, np.round(n * areas / areas.sum()).astype(int))
    pts, normals, t1s = [], [], []
    for (axis, sign, u, v, _), k in zip(faces, counts):
        p = np.zeros((k, 3))
        p[:, axis] = sign * e[axis]
        p[:, u] = rng.uniform(-e[u], e[u], size=k)
        p[:, v] = rng.uniform(-e[v], e[v], size=k)
        nrm = np.zeros((k, 3))
        nrm[:, axis] = sign
        t = np.zeros((k, 3))
        t[:, u] = 1.0
        pts.append(p)
        normals.append(nrm)
        t1s.append(t)
    pts, normals, t1s = (np.concatenate(a) @ yaw.T for a in (pts, normals, t1s))
    h = math.sqrt(areas.sum() / counts.sum())
    return pts + shape.center, normals, t1s, h


def _checker(pts, size):
    return (np.floor(pts / size).astype(np.int64).sum(axis=1) % 2).astype(np.int64)


def generate_cameras(spec: SyntheticSceneSpec) -> list[Camera]:
    rng = np.random.default_rng([spec.seed, 1])
    start = rng.uniform(0, 2 * math.pi)
    arc = math.radians(spec.arc_degrees)
    offsets = np.linspace(-arc / 2, arc / 2, spec.camera_count) if spec.camera_count > 1 else np.zeros(1)
    cams = []
    for a in start + offsets:
        eye = np.array([spec.ring_radius * math.cos(a), spec.ring_radius * math.sin(a), spec.ring_height])
        target = rng.uniform(-spec.look_at_jitter, spec.look_at_jitter, size=3) * np.array([1, 1, 0.5])
        cams.append(Camera.from_fov(eye, target, (0.0, 0.0, 1.0), spec.fov_degrees,
                                    spec.image_size, spec.image_size))
    return cams


def generate_scene(spec: SyntheticSceneSpec) -> tuple[GaussianScene, list[Camera]]:
    """Deterministic ground-truth scene and its camera ring."""
    shapes, total = scene_layout(spec)
    rng = np.random.default_rng([spec.seed, 2])
    areas = np.array([_area(s) for s in shapes])
    counts = np.maximum(1, np.floor(total * areas / areas.sum()).astype(int))
    k = num_sh_bases(spec.sh_degree)
    parts = []
    for shape, n in zip(shapes, counts):
        sampler = {"plane": _sample_plane, "sphere": _sample_sphere, "box": _sample_box}[shape.kind]
        pts, normals, t1, h = sampler(rng, shape, int(n))
        t2 = np.cross(normals, t1)
        quats = _frame_to_quat(t1, t2, normals)
        m = pts.shape[0]
        tangent = 0.6 * h * rng.uniform(0.85, 1.15, size=(m, 2))
        scales = np.concatenate([tangent, 0.1 * tangent[:, :1]], axis=1)
        rgb = shape.colors[_checker(pts, spec.checker_size)]
        sh = np.zeros((m, k, 3))
        sh[:, 0] = rgb / SH_C0
        if k > 1:
            sh[:, 1:] = rng.uniform(-spec.view_dependence, spec.view_dependence, size=(m, k - 1, 3))
        opac = rng.uniform(0.7, 1.0, size=m)
        parts.append(GaussianScene(pts, opac, quats, scales, sh, spec.sh_degree))
    scene = GaussianScene.concat(parts)
    if len(scene) > spec.max_gaussians:
        scene = scene.take(np.sort(rng.choice(len(scene), spec.max_gaussians, replace=False)))
    return scene.astype(np.float32), generate_cameras(spec)
