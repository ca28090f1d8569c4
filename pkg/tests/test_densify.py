import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_scene
from oracles import split_children
from splatsr.densify import DensifyConfig, expected_count, load_parent_index, save_parent_index, shuffle_split
from splatsr.scene import GaussianScene


def one(alpha, scales=(0.2, 0.4, 0.8)):
    return GaussianScene(np.zeros((1, 3)), np.array([alpha]), np.array([[1.0, 0, 0, 0]]),
                         np.array([scales]), np.zeros((1, 4, 3)), sh_degree=1)


def test_identity_rotation_children():
    dense, parent = shuffle_split(one(0.9), DensifyConfig(beta=0.5))
    want = [(0.1, 0, 0), (-0.1, 0, 0), (0, 0.2, 0), (0, -0.2, 0), (0, 0, 0.4), (0, 0, -0.4)]
    assert np.allclose(dense.centers, want)
    assert np.allclose(dense.scales[0], [0.05, 0.4, 0.8])
    assert np.array_equal(parent, np.zeros(6))


def test_transparent_primitive_passes_through():
    s = one(0.3)
    dense, parent = shuffle_split(s)
    assert len(dense) == 1 and dense.equals(s) and parent.tolist() == [0]


def test_children_inherit_fields(rng):
    s = random_scene(rng, 20, opacity=0.9)
    dense, parent = shuffle_split(s)
    assert np.array_equal(dense.opacities, s.opacities[parent])
    assert np.array_equal(dense.rotations, s.rotations[parent])
    assert np.array_equal(dense.sh, s.sh[parent])


def test_sub_centers_match_scalar_oracle(rng):
    s = random_scene(rng, 300, opacity=0.8)
    cfg = DensifyConfig(beta=0.5)
    dense, _ = shuffle_split(s, cfg)
    for j in range(len(s)):
        ref = split_children(s.centers[j], s.rotations[j], s.scales[j], 0.5, 0.25)
        for k, (c, sc) in enumerate(ref):
            assert np.allclose(dense.centers[6 * j + k], c, atol=1e-12)
            assert np.allclose(dense.scales[6 * j + k], sc, atol=1e-12)


def test_children_are_centered_on_parent(rng):
    s = random_scene(rng, 50, opacity=0.8)
    dense, _ = shuffle_split(s)
    assert np.allclose(dense.centers.reshape(50, 6, 3).mean(axis=1), s.centers)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=0, max_size=60))
def test_count_law(alphas):
    n = len(alphas)
    rng = np.random.default_rng(n)
    s = random_scene(rng, n) if n else GaussianScene.empty()
    if n:
        s = s.replace(opacities=np.array(alphas))
    dense, parent = shuffle_split(s)
    opaque = int(np.count_nonzero(np.array(alphas) > 0.5)) if n else 0
    assert len(dense) == 6 * opaque + (n - opaque) == expected_count(s)
    assert parent.shape == (len(dense),)
    assert np.all(np.diff(parent) >= 0)


def test_threshold_is_strict():
    assert len(shuffle_split(one(0.5))[0]) == 1


def test_large_scene_count(rng):
    s = random_scene(rng, 8192, opacity=0.9, dtype=np.float32)
    assert len(shuffle_split(s)[0]) == 49152


def test_invalid_config():
    with pytest.raises(ValueError):
        DensifyConfig(beta=-1.0)
    with pytest.raises(ValueError):
        DensifyConfig(opacity_threshold=1.5)


def test_parent_index_file(tmp_path):
    idx = np.array([0, 0, 1, 2, 2])
    save_parent_index(idx, tmp_path / "p.txt")
    assert np.array_equal(load_parent_index(tmp_path / "p.txt"), idx)
