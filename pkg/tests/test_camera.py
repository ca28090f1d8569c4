import numpy as np
import pytest

from oracles import project
from splatsr.camera import (BehindCameraError, Camera, load_cameras, pixel_ray, pixel_rays, project_center,
                            project_points, save_cameras, unproject_depth)
from splatsr.scene import quaternion_to_rotation


def hand_camera():
    return Camera(100.0, 100.0, 32.0, 32.0, np.eye(3), np.zeros(3), 64, 64)


def random_pose(rng):
    R = quaternion_to_rotation(rng.normal(size=4))
    return Camera(90.0, 80.0, 31.5, 30.0, R, rng.normal(size=3), 64, 64)


def test_optical_axis_hits_principal_point():
    uv, z = project_center(hand_camera(), [0, 0, 1])
    assert np.allclose(uv, [32, 32], atol=1e-6) and z == 1.0


def test_hand_computed_projection():
    uv, z = project_center(hand_camera(), [0.5, 0.25, 2])
    assert np.allclose(uv, [57.0, 44.5], atol=1e-6) and np.isclose(z, 2.0)


def test_behind_camera_rejected():
    with pytest.raises(BehindCameraError):
        project_center(hand_camera(), [0, 0, -1])


def test_projection_matches_scalar_oracle(rng):
    cam = random_pose(rng)
    pts = cam.center + rng.normal(size=(200, 3)) + 5 * cam.R[2]
    uv, z = project_points(cam, pts)
    for p, (u, v), d in zip(pts, uv, z):
        ou, ov, od = project(cam.K.tolist(), cam.R.tolist(), cam.t.tolist(), p.tolist())
        assert np.allclose([u, v, d], [ou, ov, od], atol=1e-9)


def test_principal_ray_is_optical_axis():
    o, d = pixel_ray(hand_camera(), 32, 32)
    assert np.allclose(o, 0) and np.allclose(d, [0, 0, 1])


def test_origin_is_camera_center(rng):
    cam = random_pose(rng)
    o, _ = pixel_ray(cam, 10, 20)
    assert np.allclose(o, -cam.R.T @ cam.t)
    # the center is the null space of P = [R|t]
    assert np.allclose(cam.P @ np.append(o, 1.0), 0, atol=1e-12)
    assert np.allclose(np.linalg.solve(cam.R, -cam.t), o)


def test_symmetric_pixels_mirror_in_x():
    cam = hand_camera()
    _, a = pixel_ray(cam, 32 + 7, 32 + 3)
    _, b = pixel_ray(cam, 32 - 7, 32 + 3)
    assert np.allclose(a * [-1, 1, 1], b)


def test_ray_projection_round_trip(rng):
    cam = random_pose(rng)
    u, v = rng.uniform(0, 64, 1000), rng.uniform(0, 64, 1000)
    o, d = pixel_rays(cam, u, v)
    pts = o + d * rng.uniform(0.5, 20, (1000, 1))
    uv, _ = project_points(cam, pts)
    assert np.abs(uv - np.stack([u, v], 1)).max() < 1e-4


def test_unproject_then_project_is_identity(rng):
    cam = random_pose(rng)
    depth = rng.uniform(1, 5, (64, 64))
    pts = unproject_depth(cam, depth)
    uv, z = project_points(cam, pts.reshape(-1, 3))
    v, u = np.mgrid[0:64, 0:64]
    assert np.allclose(uv, np.stack([u.ravel(), v.ravel()], 1), atol=1e-8)
    assert np.allclose(z, depth.ravel())


def test_scaled_camera_keeps_pixel_centers_aligned():
    lr = Camera(20.0, 20.0, 7.5, 7.5, np.eye(3), np.zeros(3), 16, 16)
    hr = lr.scaled(4)
    assert (hr.width, hr.height) == (64, 64)
    # LR pixel 0 covers HR pixels 0..3, whose center is 1.5
    mu = np.array([(0 - 7.5) / 20, 0, 1.0])
    assert np.allclose(project_points(hr, mu[None])[0][0, 0], 1.5)


def test_camera_file_round_trip(tmp_path, rng):
    cams = [random_pose(rng) for _ in range(3)]
    save_cameras(cams, tmp_path / "c.txt")
    back = load_cameras(tmp_path / "c.txt")
    for a, b in zip(cams, back):
        assert np.array_equal(a.K, b.K) and np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t)
