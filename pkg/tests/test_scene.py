import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_scene
from oracles import quat_matrix
from splatsr.scene import (SH_C0, DegenerateRotationError, GaussianScene, SceneError, evaluate_sh,
                           load_scene, normalize_quaternions, parse_scene_bytes, quaternion_to_rotation,
                           rotation_to_quaternion, save_scene, sh_basis)


def test_identity_quaternion():
    assert np.array_equal(quaternion_to_rotation([1, 0, 0, 0]), np.eye(3))


def test_quarter_turn_about_z():
    R = quaternion_to_rotation([0.70710678, 0, 0, 0.70710678])
    assert np.allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-7)


def test_zero_quaternion_rejected():
    with pytest.raises(DegenerateRotationError):
        quaternion_to_rotation([0, 0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1))
def test_rotation_matches_scalar_formula_and_is_orthonormal(q):
    R = quaternion_to_rotation(q)
    assert np.allclose(R, quat_matrix(*q), atol=1e-12)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)


def test_rotation_quaternion_round_trip(rng):
    q = rng.normal(size=(50, 4))
    R = quaternion_to_rotation(q)
    assert np.allclose(quaternion_to_rotation(rotation_to_quaternion(R)), R, atol=1e-10)


def test_normalize_is_idempotent(rng):
    q = normalize_quaternions(rng.normal(size=(100, 4)))
    assert np.array_equal(normalize_quaternions(q), q)


def test_degree0_is_direction_independent(rng):
    c = np.full((1, 3), 0.5 / SH_C0)
    for d in rng.normal(size=(5, 3)):
        assert np.allclose(evaluate_sh(c, d), 0.5)


def test_degree1_band_flips_with_direction(rng):
    c = np.zeros((4, 3))
    c[1:] = rng.normal(size=(3, 3))
    d = rng.normal(size=3)
    assert np.allclose(evaluate_sh(c, d), -evaluate_sh(c, -d))


def test_degree1_matches_term_by_term_sum(rng):
    c = rng.normal(size=(4, 3))
    d = np.array([0.0, 0.0, 1.0])
    basis = [0.28209479177387814, -0.4886025119029199 * 0.0, 0.4886025119029199 * 1.0,
             -0.4886025119029199 * 0.0]
    ref = sum(basis[i] * c[i] for i in range(4))
    assert np.allclose(evaluate_sh(c, d), ref)
    assert np.allclose(sh_basis(d[None], 1)[0], basis)


def test_empty_scene_round_trip(tmp_path):
    save_scene(GaussianScene.empty(), tmp_path / "e.ply")
    back = load_scene(tmp_path / "e.ply")
    assert len(back) == 0
    assert b"element vertex 0" in (tmp_path / "e.ply").read_bytes()


def test_single_primitive_round_trip(tmp_path, rng):
    s = random_scene(rng, 1, dtype=np.float32)
    save_scene(s, tmp_path / "one.ply")
    assert load_scene(tmp_path / "one.ply").equals(s)


def test_degree_one_round_trip(tmp_path, rng):
    s = random_scene(rng, 37, dtype=np.float32)
    save_scene(s, tmp_path / "s.ply")
    back = load_scene(tmp_path / "s.ply")
    assert back.sh_degree == 1 and back.equals(s)


def test_invalid_opacity_rejected_at_load(tmp_path, rng):
    s = random_scene(rng, 3, dtype=np.float32)
    save_scene(s, tmp_path / "s.ply")
    blob = bytearray((tmp_path / "s.ply").read_bytes())
    body = blob.index(b"end_header\n") + len(b"end_header\n")
    rec = np.frombuffer(bytes(blob[body:]), dtype="<f4").reshape(3, -1).copy()
    rec[1, 3] = 1.5
    with pytest.raises(SceneError, match="record 1: opacity"):
        parse_scene_bytes(bytes(blob[:body]) + rec.tobytes())


def test_malformed_header_rejected():
    with pytest.raises(SceneError):
        parse_scene_bytes(b"not a ply file")


def test_scene_is_immutable(rng):
    s = random_scene(rng, 2)
    with pytest.raises(AttributeError):
        s.centers = np.zeros((2, 3))
