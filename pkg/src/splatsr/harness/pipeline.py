"""Backbone pretraining, scaffold preparation, training and evaluation loops."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as F
from ..densify import shuffle_split
from ..model import GaussianTensors, NetworkInput, PointGeometry, SRNetwork, ViewInput, render_tensor
from ..raster import RenderTarget, render
from ..scene import GaussianScene
from ..tensor import Tensor, load_checkpoint, save_checkpoint
from ..tensor.optim import Adam
from .backbone import Backbone, union
from .config import (STREAM_BACKBONE_BATCHES, STREAM_BACKBONE_INIT, STREAM_BATCHES, STREAM_NETWORK_INIT,
                     RunConfig, stream_rng)
from .data import TrainSample, build_sample
from .imaging import upsample
from .losses import image_loss
from .metrics import psnr, ssim

log = logging.getLogger(__name__)

METRIC_FIELDS = ["step", "loss", "mse", "perc", "psnr"]
EVAL_FIELDS = ["variant", "psnr", "ssim", "gaussians"]


class CheckpointMismatchError(ValueError):
    pass


# --- data -------------------------------------------------------------------

def build_dataset(cfg: RunConfig, split: str) -> list[TrainSample]:
    n = cfg.train_scenes if split == "train" else cfg.eval_scenes
    rcfg = cfg.render_config()
    return [build_sample(cfg.scene_spec(split, i), cfg.factor, cfg.lr_filter, rcfg) for i in range(n)]


@dataclass
class Prepared:
    """A sample after the frozen backbone and densification, ready for the network."""

    sample: TrainSample
    lr_views: list[GaussianScene]
    lr_scene: GaussianScene
    dense: GaussianScene
    source_view: np.ndarray
    t_pre: list[np.ndarray]
    geometry: PointGeometry
    inputs: dict = field(default_factory=dict)

    def network_input(self, cfg: RunConfig, upsampler: str | None = None) -> NetworkInput:
        method = upsampler or cfg.upsampler
        if method not in self.inputs:
            s = self.sample
            views = [ViewInput(upsample(s.lr_images[v], cfg.factor, method).astype(np.float32),
                               s.input_cams[v], self.t_pre[v],
                               upsample(s.lr_depths[v], cfg.factor, "nearest").astype(np.float32))
                     for v in range(2)]
            self.inputs[method] = NetworkInput(views, self.dense, self.source_view, self.geometry,
                                               cfg.pos_cap_mult * self.geometry.nn_scale)
        return self.inputs[method]


def prepare(sample: TrainSample, backbone: Backbone, cfg: RunConfig) -> Prepared:
    views, grids = [], []
    for v in range(2):
        sc, grid = backbone.reconstruct(sample.lr_images[v], sample.lr_cams[v], sample.lr_depths[v])
        views.append(sc)
        grids.append(grid.tokens.data.astype(np.float32))
    lr_scene = GaussianScene.concat(views)
    source = np.repeat(np.arange(2), [len(v) for v in views])
    dense, parent = shuffle_split(lr_scene, cfg.densify_config())
    geo = PointGeometry.build(dense.centers, cfg.knn)
    return Prepared(sample, views, lr_scene, dense, source[parent], grids, geo)


# --- backbone ---------------------------------------------------------------

def _render_gt(g: GaussianTensors, cam, rcfg) -> Tensor:
    return render_tensor(g.means, g.quats, g.scales, g.opacities, g.sh, cam, RenderTarget.for_camera(cam), rcfg)


def backbone_loss(backbone: Backbone, s: TrainSample, rcfg, novel_weight: float = 0.0) -> Tensor:
    """Own-view reconstruction of each input; ``novel_weight`` optionally adds union
    renders at the LR target views."""
    parts = [backbone(s.lr_images[v], s.lr_cams[v], s.lr_depths[v])[0] for v in range(2)]
    terms = [F.mse(_render_gt(parts[v], s.lr_cams[v], rcfg), s.lr_images[v]) for v in range(2)]
    if novel_weight > 0:
        both = union(parts)
        for img, cam in zip(s.lr_targets, s.target_cams):
            terms.append(F.mse(_render_gt(both, cam.scaled(1.0 / s.factor), rcfg), img) * novel_weight)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def pretrain_backbone(cfg: RunConfig, samples: list[TrainSample]) -> tuple[Backbone, list[float]]:
    backbone = Backbone(cfg.backbone_config(), stream_rng(cfg.seed, STREAM_BACKBONE_INIT))
    opt = Adam(backbone.named_parameters(), cfg.backbone_lr)
    rcfg = cfg.render_config()
    losses = []
    for step in range(1, cfg.backbone_steps + 1):
        i = int(stream_rng(cfg.seed, STREAM_BACKBONE_BATCHES, step).integers(len(samples)))
        loss = backbone_loss(backbone, samples[i], rcfg, cfg.backbone_novel_weight)
        loss.backward()
        opt.step()
        opt.zero_grad()
        losses.append(float(loss.data))
        if step % 50 == 0:
            log.info("backbone step %d loss %.6f", step, np.mean(losses[-50:]))
    return backbone, losses


def save_backbone(backbone: Backbone, path) -> None:
    save_checkpoint(path, backbone.state_dict(), {"kind": "backbone"})


def load_backbone(cfg: RunConfig, path) -> Backbone:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "backbone":
        raise CheckpointMismatchError(f"{path} is not a backbone checkpoint")
    backbone = Backbone(cfg.backbone_config(), stream_rng(cfg.seed, STREAM_BACKBONE_INIT))
    try:
        backbone.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatchError(f"backbone checkpoint {path} does not fit the config: {exc}") from None
    return backbone


# --- network ----------------------------------------------------------------

def make_network(cfg: RunConfig) -> SRNetwork:
    return SRNetwork(cfg.network_config(), stream_rng(cfg.seed, STREAM_NETWORK_INIT))


def render_prediction(g: GaussianTensors, cam, rcfg) -> Tensor:
    return _render_gt(g, cam, rcfg)


def sample_loss(net: SRNetwork, prep: Prepared, cfg: RunConfig):
    g = net(prep.network_input(cfg))
    rcfg = cfg.render_config()
    weights = cfg.loss_weights()
    total, mse_sum, perc_sum, psnrs = None, 0.0, 0.0, []
    targets = prep.sample.targets
    for img, cam in zip(targets, prep.sample.target_cams):
        pred = render_prediction(g, cam, rcfg)
        terms = image_loss(pred, img, weights)
        total = terms.total if total is None else total + terms.total
        mse_sum += terms.mse
        perc_sum += terms.perc
        psnrs.append(psnr(pred.data, img))
    n = len(targets)
    return total * (1.0 / n), mse_sum / n, perc_sum / n, float(np.mean(psnrs))


def batch_indices(cfg: RunConfig, step: int) -> np.ndarray:
    """Scenes used at ``step``: a pure function of (seed, step), so resuming replays exactly."""
    return stream_rng(cfg.seed, STREAM_BATCHES, step).choice(cfg.train_scenes, cfg.batch, replace=False)


@dataclass
class TrainState:
    step: int = 0
    acc: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    acc_n: int = 0
    rows: list = field(default_factory=list)


def save_training(path, net: SRNetwork, opt: Adam, state: TrainState, cfg: RunConfig) -> None:
    arrays = dict(net.state_dict())
    arrays.update(opt.state_arrays())
    meta = {"kind": "network", "step": str(state.step), "acc": ",".join(repr(float(a)) for a in state.acc),
            "acc_n": str(state.acc_n), "config": cfg.to_text().replace("\n", ";").replace(" ", "")}
    save_checkpoint(path, arrays, meta)


def load_network(cfg: RunConfig, path, with_optimizer: bool = False):
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "network":
        raise CheckpointMismatchError(f"{path} is not a network checkpoint")
    net = make_network(cfg)
    weights = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    try:
        net.load_state_dict(weights)
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatchError(f"network checkpoint {path} does not fit the config: {exc}") from None
    if not with_optimizer:
        return net
    opt = Adam(net.named_parameters(), cfg.lr)
    state = TrainState(step=int(meta["step"]), acc=[float(a) for a in meta["acc"].split(",")],
                       acc_n=int(meta["acc_n"]))
    opt.load_state_arrays(arrays, state.step)
    return net, opt, state


def write_csv(path, fieldnames, rows) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def train(cfg: RunConfig, prepared: list[Prepared], out_dir, resume: str | None = None,
          stop_at: int | None = None) -> SRNetwork:
    """Optimize the network for ``cfg.steps`` steps, logging a row every ``log_interval``.

    Writes ``metrics.csv`` and ``checkpoint/`` under ``out_dir``. ``stop_at``
    ends early (for resume tests) after saving a checkpoint.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume:
        net, opt, state = load_network(cfg, resume, with_optimizer=True)
        if (out / "metrics.csv").exists():
            state.rows = [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()}
                          for r in read_csv(out / "metrics.csv") if int(r["step"]) <= state.step]
    else:
        net = make_network(cfg)
        opt = Adam(net.named_parameters(), cfg.lr)
        state = TrainState()
    last = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    while state.step < last:
        state.step += 1
        idx = batch_indices(cfg, state.step)
        total, stats = None, np.zeros(4)
        for i in idx:
            loss, m, p, ps = sample_loss(net, prepared[int(i)], cfg)
            total = loss if total is None else total + loss
            stats += (float(loss.data), m, p, ps)
        total = total * (1.0 / len(idx))
        total.backward()
        opt.step()
        opt.zero_grad()
        state.acc = [a + s / len(idx) for a, s in zip(state.acc, stats)]
        state.acc_n += 1
        if state.step % cfg.log_interval == 0 or state.step == cfg.steps:
            row = {"step": state.step}
            row.update({k: a / state.acc_n for k, a in zip(METRIC_FIELDS[1:], state.acc)})
            state.rows.append(row)
            state.acc, state.acc_n = [0.0, 0.0, 0.0, 0.0], 0
            write_csv(out / "metrics.csv", METRIC_FIELDS, state.rows)
            log.info("step %d loss %.6f psnr %.3f", state.step, row["loss"], row["psnr"])
        if cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
            save_training(out / "checkpoint", net, opt, state, cfg)
    save_training(out / "checkpoint", net, opt, state, cfg)
    if not state.rows:
        write_csv(out / "metrics.csv", METRIC_FIELDS, [])
    return net


# --- evaluation -------------------------------------------------------------

def _score(pred_images, prep: Prepared) -> tuple[list[float], list[float]]:
    ps, ss = [], []
    for pred, gt in zip(pred_images, prep.sample.targets):
        ps.append(psnr(pred, gt))
        ss.append(ssim(pred, gt))
    return ps, ss


def predict_scene(net: SRNetwork, prep: Prepared, cfg: RunConfig, upsampler: str | None = None) -> GaussianScene:
    with F.no_grad():
        return net(prep.network_input(cfg, upsampler)).to_scene(cfg.sh_degree)


def evaluate_baselines(cfg: RunConfig, prepared: list[Prepared]) -> list[dict]:
    """scaffold (densified, no offsets), base (LR Gaussians at HR) and render-up
    (LR render at the target pose, upsampled)."""
    rcfg = cfg.render_config()
    rows = []
    for name in ("scaffold", "base", "render-up"):
        ps, ss, counts = [], [], []
        for prep in prepared:
            cams = prep.sample.target_cams
            if name == "scaffold":
                scene = prep.dense
                imgs = [render(scene, c, cfg=rcfg) for c in cams]
            elif name == "base":
                scene = prep.lr_scene
                imgs = [render(scene, c, cfg=rcfg) for c in cams]
            else:
                scene = prep.lr_scene
                imgs = [np.clip(upsample(render(scene, c.scaled(1.0 / cfg.factor), cfg=rcfg), cfg.factor,
                                         cfg.upsampler), 0.0, 1.0) for c in cams]
            p, s = _score(imgs, prep)
            ps += p
            ss += s
            counts.append(len(scene))
        rows.append({"variant": name, "psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)),
                     "gaussians": int(np.mean(counts))})
    return rows


def evaluate_network(net: SRNetwork, cfg: RunConfig, prepared: list[Prepared], variant: str,
                     upsampler: str | None = None) -> dict:
    rcfg = cfg.render_config()
    ps, ss, counts = [], [], []
    for prep in prepared:
        scene = predict_scene(net, prep, cfg, upsampler)
        p, s = _score([render(scene, c, cfg=rcfg) for c in prep.sample.target_cams], prep)
        ps += p
        ss += s
        counts.append(len(scene))
    return {"variant": variant, "psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)),
            "gaussians": int(np.mean(counts))}
