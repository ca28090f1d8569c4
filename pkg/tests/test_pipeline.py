import numpy as np
import pytest

from tiny import tiny_run_config
from splatsr.harness.pipeline import (batch_indices, build_dataset, evaluate_baselines, evaluate_network,
                                      load_network, make_network, prepare, pretrain_backbone, read_csv, train)


@pytest.fixture(scope="module")
def prepared():
    cfg = tiny_run_config()
    samples = build_dataset(cfg, "train")
    backbone, losses = pretrain_backbone(cfg, samples)
    evals = build_dataset(cfg, "eval")
    return cfg, [prepare(s, backbone, cfg) for s in samples], [prepare(s, backbone, cfg) for s in evals], losses


def test_dataset_shapes(prepared):
    cfg, train_p, _, _ = prepared
    s = train_p[0].sample
    assert len(s.lr_images) == 2 and s.lr_images[0].shape == (8, 8, 3)
    assert s.targets[0].shape == (32, 32, 3) and len(s.targets) == 3
    # one LR Gaussian per LR pixel and view; the scaffold obeys the split count law
    assert len(train_p[0].lr_scene) == 2 * 64
    opaque = int(np.count_nonzero(train_p[0].lr_scene.opacities > cfg.opacity_threshold))
    assert len(train_p[0].dense) == 6 * opaque + (128 - opaque)


def test_dataset_is_deterministic():
    cfg = tiny_run_config(train_scenes=2)
    a, b = build_dataset(cfg, "train"), build_dataset(cfg, "train")
    assert all(np.array_equal(x.lr_images[0], y.lr_images[0]) for x, y in zip(a, b))
    assert not np.array_equal(a[0].lr_images[0], a[1].lr_images[0])


def test_backbone_loss_decreases(prepared):
    losses = prepared[3]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_zero_steps_equals_scaffold(prepared, tmp_path):
    cfg, train_p, eval_p, _ = prepared
    cfg0 = cfg.replace(steps=0)
    net = train(cfg0, train_p, tmp_path)
    row = evaluate_network(net, cfg0, eval_p, "full")
    scaffold = evaluate_baselines(cfg0, eval_p)[0]
    assert scaffold["variant"] == "scaffold"
    assert row["psnr"] == scaffold["psnr"] and row["ssim"] == scaffold["ssim"]
    assert row["gaussians"] == scaffold["gaussians"]


def test_runs_are_reproducible(prepared, tmp_path):
    cfg, train_p, _, _ = prepared
    train(cfg, train_p, tmp_path / "a")
    train(cfg, train_p, tmp_path / "b")
    for f in ("metrics.csv", "checkpoint/weights.bin", "checkpoint/manifest.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_resume_replays_exactly(prepared, tmp_path):
    cfg, train_p, _, _ = prepared
    train(cfg, train_p, tmp_path / "straight")
    train(cfg, train_p, tmp_path / "split", stop_at=3)
    train(cfg, train_p, tmp_path / "split", resume=str(tmp_path / "split" / "checkpoint"))
    for f in ("metrics.csv", "checkpoint/weights.bin"):
        assert (tmp_path / "straight" / f).read_bytes() == (tmp_path / "split" / f).read_bytes()


def test_metrics_rows(prepared, tmp_path):
    cfg, train_p, _, _ = prepared
    train(cfg, train_p, tmp_path)
    rows = read_csv(tmp_path / "metrics.csv")
    assert [int(r["step"]) for r in rows] == [2, 4, 6]
    assert all(np.isfinite(float(r["loss"])) for r in rows)


def test_checkpoint_round_trip(prepared, tmp_path):
    cfg, train_p, eval_p, _ = prepared
    net = train(cfg, train_p, tmp_path)
    back = load_network(cfg, tmp_path / "checkpoint")
    a, b = evaluate_network(net, cfg, eval_p[:1], "x"), evaluate_network(back, cfg, eval_p[:1], "x")
    assert a == b


def test_no_offset_variant_regresses_directly(prepared, tmp_path):
    cfg, train_p, eval_p, _ = prepared
    c = cfg.replace(use_offsets=False, steps=2)
    net = train(c, train_p, tmp_path)
    row = evaluate_network(net, c, eval_p, "no-offset")
    assert row["gaussians"] == 2 * 32 * 32 and np.isfinite(row["psnr"])


def test_switch_variants_train(prepared, tmp_path):
    cfg, train_p, eval_p, _ = prepared
    for i, sw in enumerate(({"use_refine": False}, {"use_point_blocks": False})):
        c = cfg.replace(steps=2, **sw)
        assert np.isfinite(evaluate_network(train(c, train_p, tmp_path / str(i)), c, eval_p, "v")["psnr"])


def test_upsampler_swap_changes_only_inputs(prepared):
    cfg, _, eval_p, _ = prepared
    net = make_network(cfg)
    a = evaluate_network(net, cfg, eval_p, "a", "bilinear")
    b = evaluate_network(net, cfg, eval_p, "b", "bicubic")
    assert a["gaussians"] == b["gaussians"]


def test_batches_depend_only_on_seed_and_step():
    cfg = tiny_run_config()
    assert np.array_equal(batch_indices(cfg, 5), batch_indices(cfg, 5))
    assert len(set(batch_indices(cfg, 5))) == cfg.batch


def test_smoke_schedule_loss_falls(tmp_path):
    """8 scenes, 200 steps at the smoke network size: the last logged window beats the first."""
    from pathlib import Path

    from splatsr.harness.config import RunConfig
    cfg = RunConfig.load(Path(__file__).parents[1] / "configs" / "smoke.cfg").replace(
        train_scenes=8, steps=200, backbone_steps=100)
    samples = build_dataset(cfg, "train")
    backbone, _ = pretrain_backbone(cfg, samples)
    train(cfg, [prepare(s, backbone, cfg) for s in samples], tmp_path)
    rows = read_csv(tmp_path / "metrics.csv")
    assert float(rows[-1]["loss"]) < float(rows[0]["loss"])
