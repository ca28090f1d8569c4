"""Gaussian primitives, scenes, quaternion/SH math and the PLY scene format."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
MAX_SH_DEGREE = 1


class SceneError(ValueError):
    """Invalid scene content or a malformed scene file."""


class DegenerateRotationError(ValueError):
    pass


def num_sh_bases(degree: int) -> int:
    return (degree + 1) ** 2


def quaternion_to_rotation(q) -> np.ndarray:
    """Rotation matrix for a (w, x, y, z) quaternion, or a stack of them.

    The quaternion is renormalized first; a zero-norm input raises
    DegenerateRotationError.
    """
    q = np.asarray(q, dtype=np.float64 if np.asarray(q).dtype.kind != "f" else None)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegenerateRotationError("quaternion has zero norm")
    q = q / norm
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def rotation_to_quaternion(rot) -> np.ndarray:
    """Inverse of quaternion_to_rotation (w >= 0); accepts (3, 3) or (N, 3, 3)."""
    m = np.asarray(rot, dtype=np.float64)
    if m.ndim == 3:
        return np.stack([rotation_to_quaternion(r) for r in m]) if len(m) else np.zeros((0, 4))
    tr = np.trace(m)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Renormalize quaternion rows to unit length.

    Rows whose norm is already 1 within a few ulps are returned bit-for-bit,
    which makes renormalization idempotent.
    """
    q = np.asarray(q)
    if q.shape[0] == 0:
        return q.copy()
    norms = np.linalg.norm(q.astype(np.float64), axis=-1, keepdims=True)
    if np.any(norms < 1e-12):
        bad = int(np.argmax(norms.reshape(-1) < 1e-12))
        raise DegenerateRotationError(f"primitive {bad}: zero-norm quaternion")
    tol = 4 * np.finfo(q.dtype).eps
    unit = np.abs(norms - 1.0) <= tol
    return np.where(unit, q, (q / norms).astype(q.dtype))


def sh_basis(dirs, degree: int) -> np.ndarray:
    """Real SH basis values, shape (..., (degree+1)**2)."""
    dirs = np.asarray(dirs)
    if degree > MAX_SH_DEGREE or degree < 0:
        raise SceneError(f"unsupported SH degree {degree}")
    out = np.empty(dirs.shape[:-1] + (num_sh_bases(degree),), dtype=dirs.dtype)
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    return out


def sh_degree_for_length(n: int) -> int:
    for deg in range(MAX_SH_DEGREE + 1):
        if 3 * num_sh_bases(deg) == n:
            return deg
    raise SceneError(f"SH coefficient length {n} matches no supported degree")


def evaluate_sh(coeffs, direction, degree: int | None = None) -> np.ndarray:
    """RGB color of SH coefficients seen along ``direction``.

    ``coeffs`` is either flat (3*K,) in basis-major order or shaped (..., K, 3).
    No clamping happens here.
    """
    c = np.asarray(coeffs)
    if c.ndim == 1:
        deg = sh_degree_for_length(c.shape[0])
        c = c.reshape(num_sh_bases(deg), 3)
    else:
        deg = sh_degree_for_length(3 * c.shape[-2])
        if c.shape[-1] != 3:
            raise SceneError(f"SH coefficients must end in 3 channels, got shape {c.shape}")
    if degree is not None and degree != deg:
        raise SceneError(f"expected SH degree {degree}, coefficients have degree {deg}")
    basis = sh_basis(np.asarray(direction, dtype=c.dtype), deg)
    return np.einsum("...k,...kc->...c", basis, c)


@dataclass(frozen=True)
class GaussianPrimitive:
    center: np.ndarray
    opacity: float
    rotation: np.ndarray
    scale: np.ndarray
    appearance: np.ndarray  # flat, basis-major


class GaussianScene:
    """Immutable struct-of-arrays collection of Gaussian primitives.

    Arrays: centers (N,3), opacities (N,), rotations (N,4) as (w,x,y,z),
    scales (N,3) and sh (N,K,3). Quaternions are renormalized on
    construction.
    """

    __slots__ = ("centers", "opacities", "rotations", "scales", "sh", "sh_degree")

    def __init__(self, centers, opacities, rotations, scales, sh, sh_degree: int | None = None,
                 validate: bool = True, dtype=None):
        centers = np.asarray(centers)
        dtype = np.dtype(dtype) if dtype is not None else (
            centers.dtype if centers.dtype.kind == "f" else np.dtype(np.float64))
        centers = np.asarray(centers, dtype=dtype).reshape(-1, 3)
        n = centers.shape[0]
        opacities = np.asarray(opacities, dtype=dtype).reshape(n)
        rotations = np.asarray(rotations, dtype=dtype).reshape(n, 4)
        scales = np.asarray(scales, dtype=dtype).reshape(n, 3)
        sh = np.asarray(sh, dtype=dtype)
        if sh_degree is None:
            sh_degree = sh_degree_for_length(3 * sh.shape[1]) if sh.ndim == 3 else (
                sh_degree_for_length(sh.shape[-1]) if n else 1)
        k = num_sh_bases(sh_degree)
        try:
            sh = sh.reshape(n, k, 3)
        except ValueError as exc:
            raise SceneError(f"SH array of shape {sh.shape} does not fit degree {sh_degree}") from exc

        if validate:
            _validate_arrays(centers, opacities, rotations, scales, sh)
        rotations = normalize_quaternions(rotations)

        for name, arr in (("centers", centers), ("opacities", opacities), ("rotations", rotations),
                          ("scales", scales), ("sh", sh)):
            arr = np.array(arr, dtype=dtype, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sh_degree", int(sh_degree))

    def __setattr__(self, key, value):
        raise AttributeError("GaussianScene is immutable")

    @classmethod
    def empty(cls, sh_degree: int = 1, dtype=np.float64) -> "GaussianScene":
        k = num_sh_bases(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3)),
                   np.zeros((0, k, 3)), sh_degree=sh_degree, dtype=dtype)

    @classmethod
    def from_primitives(cls, prims: list[GaussianPrimitive], sh_degree: int = 1,
                        dtype=np.float64) -> "GaussianScene":
        if not prims:
            return cls.empty(sh_degree, dtype)
        return cls(
            np.stack([p.center for p in prims]),
            np.array([p.opacity for p in prims]),
            np.stack([p.rotation for p in prims]),
            np.stack([p.scale for p in prims]),
            np.stack([np.asarray(p.appearance).reshape(-1, 3) for p in prims]),
            sh_degree=sh_degree, dtype=dtype,
        )

    def __len__(self) -> int:
        return self.centers.shape[0]

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.centers[i], float(self.opacities[i]), self.rotations[i],
                                 self.scales[i], self.sh[i].reshape(-1))

    def __iter__(self) -> Iterator[GaussianPrimitive]:
        for i in range(len(self)):
            yield self[i]

    @property
    def primitives(self) -> list[GaussianPrimitive]:
        return list(self)

    @property
    def dtype(self):
        return self.centers.dtype

    def replace(self, **fields) -> "GaussianScene":
        degree = fields.pop("sh_degree", self.sh_degree)
        args = {name: getattr(self, name) for name in ("centers", "opacities", "rotations", "scales", "sh")}
        args.update(fields)
        return GaussianScene(sh_degree=degree, dtype=self.dtype, **args)

    def astype(self, dtype) -> "GaussianScene":
        return GaussianScene(self.centers, self.opacities, self.rotations, self.scales, self.sh,
                             sh_degree=self.sh_degree, dtype=dtype, validate=False)

    def take(self, index) -> "GaussianScene":
        index = np.asarray(index)
        return GaussianScene(self.centers[index], self.opacities[index], self.rotations[index],
                             self.scales[index], self.sh[index], sh_degree=self.sh_degree,
                             dtype=self.dtype, validate=False)

    def with_sh_degree(self, degree: int) -> "GaussianScene":
        k_new = num_sh_bases(degree)
        sh = np.zeros((len(self), k_new, 3), dtype=self.dtype)
        k = min(k_new, self.sh.shape[1])
        sh[:, :k] = self.sh[:, :k]
        return self.replace(sh=sh, sh_degree=degree)

    @staticmethod
    def concat(scenes: list["GaussianScene"]) -> "GaussianScene":
        deg = {s.sh_degree for s in scenes}
        if len(deg) != 1:
            raise SceneError(f"cannot concatenate scenes with SH degrees {sorted(deg)}")
        return GaussianScene(
            np.concatenate([s.centers for s in scenes]),
            np.concatenate([s.opacities for s in scenes]),
            np.concatenate([s.rotations for s in scenes]),
            np.concatenate([s.scales for s in scenes]),
            np.concatenate([s.sh for s in scenes]),
            sh_degree=deg.pop(), dtype=scenes[0].dtype, validate=False,
        )

    def equals(self, other: "GaussianScene") -> bool:
        return (self.sh_degree == other.sh_degree and len(self) == len(other) and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("centers", "opacities", "rotations", "scales", "sh")))


def _validate_arrays(centers, opacities, rotations, scales, sh):
    finite = (np.isfinite(centers).all(1) & np.isfinite(opacities) & np.isfinite(rotations).all(1)
              & np.isfinite(scales).all(1) & np.isfinite(sh.reshape(len(centers), sh[0].size if len(sh) else 0)).all(1))
    if not finite.all():
        raise SceneError(f"primitive {int(np.argmin(finite))}: non-finite value")
    bad = (opacities < 0) | (opacities > 1)
    if bad.any():
        i = int(np.argmax(bad))
        raise SceneError(f"primitive {i}: opacity {float(opacities[i])} outside [0, 1]")
    bad = ~(scales > 0).all(1)
    if bad.any():
        i = int(np.argmax(bad))
        raise SceneError(f"primitive {i}: scale {scales[i].tolist()} is not strictly positive")


# --- PLY-style scene file -------------------------------------------------

def _property_names(degree: int) -> list[str]:
    names = ["x", "y", "z", "opacity"] + [f"rot_{i}" for i in range(4)] + [f"scale_{i}" for i in range(3)]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (num_sh_bases(degree) - 1))]
    return names


def _header(n: int, degree: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"comment sh_degree {degree}", f"element vertex {n}"]
    lines += [f"property float {name}" for name in _property_names(degree)]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def scene_to_records(scene: GaussianScene) -> np.ndarray:
    n, k = len(scene), num_sh_bases(scene.sh_degree)
    rec = np.empty((n, 14 + 3 * (k - 1)), dtype="<f4")
    rec[:, 0:3] = scene.centers
    rec[:, 3] = scene.opacities
    rec[:, 4:8] = scene.rotations
    rec[:, 8:11] = scene.scales
    rec[:, 11:14] = scene.sh[:, 0, :]
    # f_rest is channel-major: all R coefficients, then G, then B
    rec[:, 14:] = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * (k - 1))
    return rec


def save_scene(scene: GaussianScene, path) -> None:
    rec = scene_to_records(scene)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_header(len(scene), scene.sh_degree))
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def load_scene(path) -> GaussianScene:
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_scene_bytes(blob)


def parse_scene_bytes(blob: bytes) -> GaussianScene:
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise SceneError("malformed header: missing 'ply' magic or 'end_header'")
    try:
        header = blob[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise SceneError("malformed header: not ASCII") from exc
    degree, count, props, fmt = None, None, [], None
    for line in header[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1:]
        elif tok[:2] == ["comment", "sh_degree"] and len(tok) == 3:
            degree = int(tok[2])
        elif tok[0] == "comment":
            continue
        elif tok[0] == "element":
            if len(tok) != 3 or tok[1] != "vertex" or count is not None:
                raise SceneError(f"malformed header: unexpected element line {line!r}")
            count = int(tok[2])
        elif tok[0] == "property":
            if len(tok) != 3 or tok[1] != "float":
                raise SceneError(f"malformed header: unsupported property {line!r}")
            props.append(tok[2])
        else:
            raise SceneError(f"malformed header: unexpected line {line!r}")
    if fmt != ["binary_little_endian", "1.0"]:
        raise SceneError(f"malformed header: unsupported format {fmt}")
    if degree is None or count is None or count < 0:
        raise SceneError("malformed header: missing sh_degree comment or vertex count")
    if degree < 0 or degree > MAX_SH_DEGREE:
        raise SceneError(f"malformed header: unsupported sh_degree {degree}")
    expected = _property_names(degree)
    if props != expected:
        raise SceneError(f"malformed header: properties {props} do not match sh_degree {degree} layout")

    width = len(expected)
    body = blob[end + len(b"end_header\n"):]
    record_bytes = 4 * width
    if len(body) != count * record_bytes:
        complete = len(body) // record_bytes
        raise SceneError(f"record {min(complete, count)}: field count mismatch "
                         f"(expected {count} records of {width} floats, got {len(body)} bytes)")
    rec = np.frombuffer(body, dtype="<f4").reshape(count, width).astype(np.float32)
    bad = ~np.isfinite(rec).all(axis=1)
    if bad.any():
        raise SceneError(f"record {int(np.argmax(bad))}: non-finite value")
    k = num_sh_bases(degree)
    sh = np.empty((count, k, 3), dtype=np.float32)
    sh[:, 0, :] = rec[:, 11:14]
    sh[:, 1:, :] = rec[:, 14:].reshape(count, 3, k - 1).transpose(0, 2, 1)
    try:
        _validate_arrays(rec[:, 0:3], rec[:, 3], rec[:, 4:8], rec[:, 8:11], sh)
    except SceneError as exc:
        raise SceneError(str(exc).replace("primitive", "record", 1)) from None
    try:
        return GaussianScene(rec[:, 0:3], rec[:, 3], rec[:, 4:8], rec[:, 8:11], sh,
                             sh_degree=degree, dtype=np.float32, validate=False)
    except DegenerateRotationError as exc:
        raise SceneError(str(exc).replace("primitive", "record", 1)) from None
