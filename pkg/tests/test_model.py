import numpy as np
import pytest

import oracles
from model_fixtures import tiny_cameras, tiny_config, tiny_input, tiny_network, tiny_scene
from splatsr import tensor as F
from splatsr.model import (OUT_OF_VIEW, BidirectionalRefine, ComposeError, ConfigError, CrossViewDecoder,
                           NetworkConfig, OffsetCaps, OffsetField, PatchEncoder, PointGeometry, TokenGrid,
                           compose, compose_tensors, knn_indices, local_attention, normalize_rows,
                           opacity_shift, patch_index, patchify)
from splatsr.model.decoder import UnsupportedConfigurationError
from splatsr.model.render_op import render_tensor
from splatsr.raster import RenderConfig, render
from splatsr.tensor import ShapeError, Tensor, gradcheck, record_attention


def grid_of(x, rows, cols, patch=8, view=0):
    return TokenGrid(Tensor(np.asarray(x, dtype=np.float64)), rows, cols, patch, view)


# --- encoder ------------------------------------------------------------------

def test_token_grid_shape(rng):
    enc = PatchEncoder(16, 32, 2, 1, 2, rng)
    g = enc(rng.uniform(size=(64, 64, 3)), [1, 1, 0.5, 0.5])
    assert (g.rows, g.cols) == (4, 4) and g.tokens.shape == (16, 32)


def test_identical_images_identical_tokens(rng):
    enc = PatchEncoder(8, 16, 2, 2, 2, rng)
    img = rng.uniform(size=(16, 24, 3))
    a, b = enc(img, [1, 1, 0.5, 0.5]), enc(img.copy(), [1, 1, 0.5, 0.5])
    assert np.array_equal(a.tokens.data, b.tokens.data)


def test_patch_permutation_permutes_embeddings(rng):
    enc = PatchEncoder(4, 8, 2, 1, 2, rng)
    img = rng.uniform(size=(8, 8, 3))
    # swap the top-left and bottom-right patches
    sw = img.copy()
    sw[:4, :4], sw[4:, 4:] = img[4:, 4:], img[:4, :4]
    a, b = enc.embed_patches(img).data, enc.embed_patches(sw).data
    assert np.array_equal(a[[3, 1, 2, 0]], b)
    # patch extraction oracle
    assert np.array_equal(patchify(img, 4)[1], img[0:4, 4:8].reshape(-1))


def test_indivisible_image_rejected(rng):
    with pytest.raises(ShapeError):
        patchify(np.zeros((10, 16, 3)), 8)


# --- refine -------------------------------------------------------------------

def refine_oracle(mod, t_en, t_pre):
    w = {k: getattr(mod, k).weight.data.tolist() for k in ("q_o", "k_o", "v_o", "q_p", "k_p", "v_p", "fuse")}
    return oracles.refine(t_en.tolist(), t_pre.tolist(), w["q_o"], w["k_o"], w["v_o"], w["q_p"], w["k_p"],
                          w["v_p"], w["fuse"], mod.fuse.bias.data.tolist(), mod.heads)


def test_refine_single_token(rng):
    with F.precision(np.float64):
        mod = BidirectionalRefine(4, 3, 1, rng)
        x, p = rng.normal(size=(1, 4)), rng.normal(size=(1, 3))
        out = mod(grid_of(x, 1, 1), grid_of(p, 1, 1)).tokens.data
    ref = np.concatenate([p @ mod.v_p.weight.data, x @ mod.v_o.weight.data], 1) @ mod.fuse.weight.data
    assert np.allclose(out, ref + mod.fuse.bias.data + x, atol=1e-12)


def test_refine_uniform_attention_averages_values(rng):
    with F.precision(np.float64):
        mod = BidirectionalRefine(4, 4, 2, rng)
        for name in ("q_o", "k_o", "q_p", "k_p"):
            getattr(mod, name).weight.data[:] = 0
        x, p = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        with record_attention() as log:
            mod(grid_of(x, 1, 3), grid_of(p, 1, 3))
    for _, w in log:
        assert np.allclose(w, 1 / 3)
    u_op = np.tile((p @ mod.v_p.weight.data).mean(0), (3, 1))
    u_po = np.tile((x @ mod.v_o.weight.data).mean(0), (3, 1))
    with F.precision(np.float64):
        out = mod(grid_of(x, 1, 3), grid_of(p, 1, 3)).tokens.data
    assert np.allclose(out, np.concatenate([u_op, u_po], 1) @ mod.fuse.weight.data + mod.fuse.bias.data + x)


def test_refine_matches_scalar_oracle(rng):
    with F.precision(np.float64):
        mod = BidirectionalRefine(8, 6, 2, rng)
        for p in mod.parameters():
            p.data = rng.normal(size=p.shape) * 0.5
        x, p = rng.normal(size=(4, 8)), rng.normal(size=(4, 6))
        out = mod(grid_of(x, 2, 2), grid_of(p, 2, 2)).tokens.data
    assert np.abs(out - np.array(refine_oracle(mod, x, p))).max() < 1e-5


def test_refine_gradients(rng):
    with F.precision(np.float64):
        mod = BidirectionalRefine(4, 4, 2, rng)
        p = rng.normal(size=(4, 4))
        rep = gradcheck(lambda x: F.tsum(F.power(mod(grid_of(x.data, 2, 2), grid_of(p, 2, 2)).tokens, 2)),
                        [rng.normal(size=(4, 4))], check=[False])
        x0 = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    assert rep.passed

    def fn(x):
        return F.tsum(F.power(mod(TokenGrid(x, 2, 2, 8), grid_of(p, 2, 2)).tokens, 2))
    assert gradcheck(fn, [x0.data]).passed


def test_refine_grid_mismatch(rng):
    mod = BidirectionalRefine(4, 4, 1, rng)
    with pytest.raises(ShapeError):
        mod(grid_of(np.zeros((4, 4)), 2, 2), grid_of(np.zeros((2, 4)), 1, 2))


# --- decoder ------------------------------------------------------------------

def layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def mha_loop(att, x, ctx):
    q = x @ att.q.weight.data + att.q.bias.data
    k = ctx @ att.k.weight.data + att.k.bias.data
    v = ctx @ att.v.weight.data + att.v.bias.data
    h = att.heads
    d = q.shape[1] // h
    out = np.zeros_like(q)
    for head in range(h):
        sl = slice(head * d, (head + 1) * d)
        out[:, sl] = oracles.attention(q[:, sl].tolist(), k[:, sl].tolist(), v[:, sl].tolist())
    return out @ att.out.weight.data + att.out.bias.data


def gelu(x):
    from scipy.special import erf
    return 0.5 * x * (1 + erf(x / np.sqrt(2)))


def decoder_loop(dec, a, b):
    P = lambda m: (m.gamma.data, m.beta.data)  # noqa: E731
    for blk in dec.blocks:
        new = []
        for x, other in ((a, b), (b, a)):
            x = x + mha_loop(blk.self_attn, layer_norm(x, *P(blk.norm1)), layer_norm(x, *P(blk.norm1)))
            x = x + mha_loop(blk.cross_attn, layer_norm(x, *P(blk.norm2)), layer_norm(other, *P(blk.norm_ctx)))
            y = layer_norm(x, *P(blk.norm3))
            y = gelu(y @ blk.mlp.fc1.weight.data + blk.mlp.fc1.bias.data)
            new.append(x + y @ blk.mlp.fc2.weight.data + blk.mlp.fc2.bias.data)
        a, b = new
    return layer_norm(a, *P(dec.norm)), layer_norm(b, *P(dec.norm))


def test_decoder_matches_reference_loop(rng):
    with F.precision(np.float64):
        dec = CrossViewDecoder(8, 2, 2, 2, rng)
        for p in dec.parameters():
            p.data = p.data + rng.normal(size=p.shape) * 0.2
        a, b = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
        out = dec([grid_of(a, 2, 2), grid_of(b, 2, 2, view=1)])
    ra, rb = decoder_loop(dec, a, b)
    assert np.allclose(out[0].tokens.data, ra, atol=1e-10)
    assert np.allclose(out[1].tokens.data, rb, atol=1e-10)


def test_identical_views_decode_identically(rng):
    dec = CrossViewDecoder(8, 2, 2, 2, rng)
    a = rng.normal(size=(4, 8))
    out = dec([grid_of(a, 2, 2), grid_of(a.copy(), 2, 2, view=1)])
    assert np.array_equal(out[0].tokens.data, out[1].tokens.data)


def test_zero_cross_value_reduces_to_self_attention(rng):
    dec = CrossViewDecoder(8, 2, 2, 2, rng)
    for blk in dec.blocks:
        blk.cross_attn.v.weight.data[:] = 0
        blk.cross_attn.v.bias.data[:] = 0
        blk.cross_attn.out.bias.data[:] = 0
    a, b = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    grids = [grid_of(a, 2, 2), grid_of(b, 2, 2, view=1)]
    full, self_only = dec(grids), dec(grids, cross=False)
    assert np.allclose(full[0].tokens.data, self_only[0].tokens.data, atol=1e-12)


def test_decoder_needs_two_views(rng):
    dec = CrossViewDecoder(8, 2, 1, 2, rng)
    with pytest.raises(UnsupportedConfigurationError):
        dec([grid_of(np.zeros((4, 8)), 2, 2)])


# --- query ----------------------------------------------------------------------

def plain_camera(size=64):
    from splatsr.camera import Camera
    return Camera(50.0, 50.0, 32.0, 32.0, np.eye(3), np.zeros(3), size, size)


def at_pixel(cam, u, v, z=2.0):
    return np.array([[(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z]])


def test_corner_pixel_maps_to_first_token():
    cam = plain_camera()
    assert patch_index(cam, at_pixel(cam, 0, 0), 16)[0] == 0


def test_pixel_to_token_integer_division():
    cam = plain_camera()
    assert patch_index(cam, at_pixel(cam, 33, 17), 16)[0] == 1 * 4 + 2


def test_behind_camera_is_out_of_view():
    cam = plain_camera()
    assert patch_index(cam, np.array([[0.0, 0.0, -1.0]]), 16)[0] == OUT_OF_VIEW
    assert patch_index(cam, at_pixel(cam, 80, 10), 16)[0] == OUT_OF_VIEW


# --- point stack ------------------------------------------------------------

def test_knn_includes_self_and_breaks_ties_by_index():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 3, 0]])
    nbr = knn_indices(pts, 3)
    assert nbr[0].tolist() == [0, 1, 2]
    assert knn_indices(pts[:2], 5).shape == (2, 2)


def test_zero_head_gives_zero_offsets(rng):
    cfg = tiny_config()
    net = tiny_network(cfg)
    raw = net.raw_offsets(tiny_input(rng, cfg))
    assert raw.shape == (30, cfg.offset_dim) and np.all(raw.data == 0)


def test_single_gaussian_scene_gives_finite_offsets(rng):
    cfg = tiny_config()
    net = tiny_network(cfg)
    net.offsets.head_out.weight.data = rng.normal(size=net.offsets.head_out.weight.shape).astype(np.float32)
    inp = tiny_input(rng, cfg, scene=tiny_scene(rng, 1))
    assert inp.geometry.neighbors.tolist() == [[0]]
    raw = net.raw_offsets(inp)
    assert raw.shape == (1, cfg.offset_dim) and np.all(np.isfinite(raw.data))


def test_offsets_are_permutation_equivariant(rng):
    cfg = tiny_config()
    net = tiny_network(cfg)
    net.offsets.head_out.weight.data = rng.normal(size=net.offsets.head_out.weight.shape).astype(np.float32)
    inp = tiny_input(rng, cfg, n=25)
    perm = rng.permutation(25)
    inp2 = tiny_input(rng, cfg, scene=inp.dense.take(perm), images=[v.image for v in inp.views])
    for v in range(2):
        inp2.views[v].t_pre = inp.views[v].t_pre
    inp2.source_view = inp.source_view[perm]
    a, b = net.raw_offsets(inp).data, net.raw_offsets(inp2).data
    assert np.allclose(a[perm], b, atol=1e-5)


def test_local_attention_gradients(rng):
    q, k, v, bias = rng.normal(size=(3, 1, 2, 4)), rng.normal(size=(3, 5, 2, 4)), rng.normal(size=(3, 5, 2, 4)), \
        rng.normal(size=(3, 5, 2))
    rep = gradcheck(lambda *a: F.tsum(F.power(local_attention(*a), 2)), [q, k, v, bias])
    assert rep.passed, str(rep)


def test_local_attention_matches_dense_attention(rng):
    q, k, v = rng.normal(size=(3, 1, 2, 4)), rng.normal(size=(3, 5, 2, 4)), rng.normal(size=(3, 5, 2, 4))
    with F.precision(np.float64):
        out = local_attention(Tensor(q), Tensor(k), Tensor(v)).data
    for i in range(3):
        for h in range(2):
            ref = oracles.attention(q[i, :, h].tolist(), k[i, :, h].tolist(), v[i, :, h].tolist())
            assert np.allclose(out[i, h], ref[0])


# --- composition ------------------------------------------------------------

def test_zero_offsets_are_identity(rng):
    dense = tiny_scene(rng, 200)
    hr = compose(dense, OffsetField.zeros(200, 4), OffsetCaps(0.1))
    for f in ("centers", "opacities", "rotations", "scales", "sh"):
        assert np.array_equal(getattr(hr, f), getattr(dense, f)), f


def test_opacity_saturates_in_range():
    out = opacity_shift(np.array([0.5]), Tensor(np.array([10.0]))).data
    assert 0.9999 < out[0] <= 1.0
    ends = opacity_shift(np.array([0.0, 1.0]), Tensor(np.array([5.0, -5.0]))).data
    assert ends.tolist() == [0.0, 1.0]


def test_random_offsets_keep_invariants(rng):
    dense = tiny_scene(rng, 1000, dtype=np.float64)
    raw = rng.normal(0, 2, size=(1000, 11 + 12))
    hr = compose(dense, OffsetField.from_raw(raw, 4), OffsetCaps(0.1))
    assert np.allclose(np.linalg.norm(hr.rotations, axis=1), 1, atol=1e-6)
    assert np.all(hr.scales > 0) and np.all((hr.opacities >= 0) & (hr.opacities <= 1))
    assert np.all(np.abs(hr.centers - dense.centers) <= 0.1 + 1e-12)


def test_raw_compose_restores_invariants(rng):
    dense = tiny_scene(rng, 100, dtype=np.float64)
    raw = rng.normal(0, 2, size=(100, 23))
    hr = compose(dense, OffsetField.from_raw(raw, 4), OffsetCaps(0.1, raw=True))
    assert np.all(hr.scales > 0) and np.all((hr.opacities >= 0) & (hr.opacities <= 1))


def test_non_finite_offset_names_primitive(rng):
    raw = np.zeros((5, 23))
    raw[3, 2] = np.nan
    with pytest.raises(ComposeError, match="primitive 3"):
        compose(tiny_scene(rng, 5), OffsetField.from_raw(raw, 4), OffsetCaps(0.1))


def test_compose_gradients(rng):
    d = tiny_scene(rng, 4, dtype=np.float64)
    caps = OffsetCaps(0.2)

    def fn(raw):
        outs = compose_tensors(d.centers, d.opacities, d.rotations, d.scales, d.sh, raw, caps)
        return sum((F.tsum(F.power(o, 2)) for o in outs[1:]), F.tsum(F.power(outs[0], 2)))
    assert gradcheck(fn, [rng.normal(0, 0.5, size=(4, 23))]).passed


def test_normalize_rows_gradient(rng):
    assert gradcheck(lambda q: F.tsum(normalize_rows(q) * np.arange(12.0).reshape(3, 4)),
                     [rng.normal(size=(3, 4))]).passed


def test_render_node_gradient(rng):
    from raster_fd import SMOOTH, fd_camera, fd_scene
    P = fd_scene(rng, 3)
    cam = fd_camera(12)
    W = rng.normal(size=(12, 12, 3))

    def fn(m, q, s, o, sh):
        return F.tsum(render_tensor(m, q, s, o, sh, cam, cfg=SMOOTH) * W)
    rep = gradcheck(fn, [P["means"], P["rotations"], P["scales"], P["opacities"], P["sh"]], eps=1e-5, tol=1e-2)
    assert rep.passed, str(rep)


# --- network ----------------------------------------------------------------

def test_network_identity_at_init(rng):
    cfg = tiny_config()
    inp = tiny_input(rng, cfg, n=60)
    out = tiny_network(cfg)(inp).to_scene()
    assert out.dtype == inp.dense.dtype
    for cam in tiny_cameras():
        assert np.array_equal(render(out, cam), render(inp.dense, cam))


def test_every_attention_row_sums_to_one(rng):
    cfg = tiny_config()
    with record_attention() as log:
        tiny_network(cfg)(tiny_input(rng, cfg))
    tags = {t for t, _ in log}
    assert {"encoder", "refine_o<-p", "refine_p<-o", "decoder_self", "decoder_cross", "point"} <= tags
    for _, w in log:
        assert np.abs(w.sum(-1) - 1).max() < 1e-6


def test_all_active_parameters_receive_gradients(rng):
    cfg = tiny_config()
    net = tiny_network(cfg)
    net.offsets.head_out.weight.data[:] = 0.01
    scene = tiny_scene(rng, 30)
    far = scene.centers.copy()
    far[0] = (5.0, 5.0, 0.0)  # outside both views: reads the out-of-view token
    inp = tiny_input(rng, cfg, scene=scene.replace(centers=far))
    g = net(inp)
    img = render_tensor(g.means, g.quats, g.scales, g.opacities, g.sh, tiny_cameras()[0])
    # the far primitive is never rendered, so a position term keeps it in the loss
    (F.mse(img, np.full(img.shape, 0.5)) + F.tsum(F.power(g.means, 2)) * 1e-3).backward()
    missing = [k for k, p in net.named_parameters().items() if p.grad is None or not np.any(p.grad)]
    assert not missing


def test_variant_parameter_sets(rng):
    full = tiny_network(tiny_config())
    direct = tiny_network(tiny_config(use_offsets=False))
    no_ref = tiny_network(tiny_config(use_refine=False))
    assert any(k.startswith("offsets.") for k in full.named_parameters())
    assert not any(k.startswith("direct.") for k in full.named_parameters())
    assert not any(k.startswith("offsets.") for k in direct.named_parameters())
    assert not any(k.startswith("refine.") for k in no_ref.named_parameters())


def test_direct_head_makes_one_gaussian_per_pixel(rng):
    cfg = tiny_config(use_offsets=False)
    out = tiny_network(cfg)(tiny_input(rng, cfg))
    assert len(out) == 2 * 16 * 16
    assert np.all(np.isfinite(out.means.data))


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(embed_dim=30, heads=4)
    assert NetworkConfig().offset_dim == 11 + 3 * 4
