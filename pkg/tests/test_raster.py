import numpy as np
import pytest

from conftest import axis_camera, random_scene
from oracles import composite
from raster_fd import check_scene
from splatsr.raster import (RenderConfig, RenderContractError, RenderTarget, load_png, load_raw, rasterize,
                            render, render_backward, render_depth, save_png, save_raw)
from splatsr.scene import SH_C0, GaussianScene


def blob(center, scale, alpha, rgb, degree=0):
    sh = np.zeros((1, (degree + 1) ** 2, 3))
    sh[0, 0] = np.asarray(rgb) / SH_C0
    return GaussianScene(np.array([center], float), np.array([alpha]), np.array([[1.0, 0, 0, 0]]),
                         np.full((1, 3), scale), sh, sh_degree=degree)


def test_empty_scene_is_background():
    cam = axis_camera()
    img = render(GaussianScene.empty(), cam, RenderTarget.for_camera(cam, (0.2, 0.4, 0.6)))
    assert img.shape == (16, 16, 3)
    assert np.all(img == np.array([0.2, 0.4, 0.6]))


def test_centered_blob_is_symmetric_with_peak_at_center():
    cam = axis_camera(17)  # odd size puts the principal point on a pixel center
    img = render(blob([0, 0, 2], 0.1, 1.0, [1, 1, 1]), cam)[..., 0]
    assert np.allclose(img, img[::-1, :], atol=1e-12)
    assert np.allclose(img, img[:, ::-1], atol=1e-12)
    assert np.unravel_index(np.argmax(img), img.shape) == (8, 8)


def test_front_blob_occludes_back_blob():
    cam = axis_camera(17)
    front = blob([0, 0, 1], 0.1, 1.0, [1, 0, 0])
    back = blob([0, 0, 2], 0.2, 1.0, [0, 0, 1])
    img = render(GaussianScene.concat([back, front]), cam)
    peak = img[8, 8]
    # alpha = opacity * exp(0) = 1 at the exact center of the front footprint
    ref, T = composite([[1, 0, 0], [0, 0, 1]], [1.0, 1.0], [0, 0, 0])
    assert np.allclose(peak, ref, atol=1e-12) and T == 0.0


def test_two_blob_compositing_matches_scalar_oracle():
    cam = axis_camera(17)
    a = blob([0, 0, 1], 0.1, 0.6, [0.9, 0.2, 0.1])
    b = blob([0, 0, 2], 0.2, 0.5, [0.1, 0.3, 0.8])
    img = render(GaussianScene.concat([b, a]), cam, RenderTarget.for_camera(cam, (0.1, 0.1, 0.1)))
    ref, _ = composite([[0.9, 0.2, 0.1], [0.1, 0.3, 0.8]], [0.6, 0.5], [0.1, 0.1, 0.1])
    assert np.allclose(img[8, 8], ref, atol=1e-12)


def test_depth_of_single_opaque_blob():
    cam = axis_camera(17)
    d = render_depth(blob([0, 0, 2], 0.2, 1.0, [1, 1, 1]), cam)
    assert np.isclose(d[8, 8], 2.0, atol=1e-9)


def test_depth_two_term_oracle():
    cam = axis_camera(17)
    cfg = RenderConfig(far=50.0)
    d = render_depth(GaussianScene.concat([blob([0, 0, 1], 0.1, 0.6, [1, 1, 1]),
                                           blob([0, 0, 2], 0.2, 0.5, [1, 1, 1])]), cam, cfg=cfg)
    ref = 0.6 * 1 + 0.4 * 0.5 * 2 + 0.4 * 0.5 * 50.0
    assert np.isclose(d[8, 8], ref, atol=1e-9)


def test_empty_depth_is_far():
    cam = axis_camera()
    assert np.all(render_depth(GaussianScene.empty(), cam, cfg=RenderConfig(far=42.0)) == 42.0)


def test_zero_upstream_gives_zero_gradients(rng):
    cam = axis_camera()
    g = render_backward(random_scene(rng, 5), cam, None, np.zeros((16, 16, 3)))
    assert all(np.all(v == 0) for v in g.as_dict().values())


def test_opacity_gradient_sign():
    cam = axis_camera(17)
    g = render_backward(blob([0, 0, 2], 0.2, 0.5, [1, 1, 1]), cam, None, np.ones((17, 17, 3)))
    assert g.opacities[0] > 0


def test_gradient_shape_contract(rng):
    with pytest.raises(RenderContractError):
        render_backward(random_scene(rng, 2), axis_camera(), None, np.zeros((8, 8, 3)))


def test_target_must_match_camera(rng):
    s = random_scene(rng, 2)
    with pytest.raises(RenderContractError):
        render(s, axis_camera(16), RenderTarget(8, 8))


def test_random_scene_gradients_match_finite_differences(rng):
    errs = check_scene(rng, 5)
    assert max(errs.values()) < 1e-2, errs


def test_render_is_deterministic(rng):
    s = random_scene(rng, 60, spread=1.0)
    cam = axis_camera(32)
    a, b = render(s, cam), render(s, cam)
    assert np.array_equal(a, b)
    g1 = render_backward(s, cam, None, a)
    g2 = render_backward(s, cam, None, a)
    assert all(np.array_equal(g1.as_dict()[k], g2.as_dict()[k]) for k in g1.as_dict())


def test_tile_size_does_not_change_image(rng):
    s = random_scene(rng, 40, spread=1.0)
    cam = axis_camera(32)
    a = render(s, cam, cfg=RenderConfig(tile_size=16))
    b = render(s, cam, cfg=RenderConfig(tile_size=8))
    assert np.allclose(a, b, atol=1e-12)


def test_float32_close_to_float64(rng):
    s = random_scene(rng, 30)
    cam = axis_camera(32)
    assert np.allclose(render(s.astype(np.float32), cam), render(s, cam), atol=1e-4)


def test_image_files_round_trip(tmp_path, rng):
    img = rng.uniform(size=(5, 7, 3))
    save_raw(img, tmp_path / "a.raw")
    assert np.array_equal(load_raw(tmp_path / "a.raw"), img.astype(np.float32))
    save_png(img, tmp_path / "a.png")
    assert np.abs(load_png(tmp_path / "a.png") - img).max() <= 0.5 / 255 + 1e-6


def test_rasterize_state_exposes_transmittance(rng):
    cam = axis_camera()
    st = rasterize(*(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 4, 3))),
                   cam, RenderTarget.for_camera(cam))
    assert np.all(st.transmittance == 1.0)
