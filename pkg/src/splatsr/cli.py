"""Command-line entry point: ``splatsr <subcommand> [--config FILE] [--key value ...]``.

Every run-config key can be overridden with ``--key-name value`` on any
subcommand. The config file is applied first, flags second. Exit status is 0
on success, 2 for usage or configuration errors and 1 for runtime failures.
The default thread count comes from ``SPLATSR_NUM_THREADS``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

THREADS_ENV = "SPLATSR_NUM_THREADS"


class UsageError(Exception):
    pass


def _apply_threads() -> None:
    n = os.environ.get(THREADS_ENV)
    if not n:
        return
    if not n.isdigit() or int(n) < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {n!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, n)
    if "numba" in sys.modules:
        import numba
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    from .harness.config import RunConfig, format_value
    p.add_argument("--config", metavar="FILE", help="run config file (key = value lines)")
    group = p.add_argument_group("run config overrides")
    defaults = RunConfig()
    for key in RunConfig.keys():
        group.add_argument(_flag(key), dest=f"cfg_{key}", metavar="VALUE",
                           help=f"{RunConfig.field_type(key).__name__}, default {format_value(getattr(defaults, key))}")


def _config(args):
    from .harness.config import RunConfig
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for key in RunConfig.keys():
        value = getattr(args, f"cfg_{key}")
        if value is not None:
            cfg.set(key, value)
    cfg.validate()
    return cfg


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} {path} does not exist")
    return p


def _out_path(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# --- subcommands -------------------------------------------------------------

def cmd_gen_data(args) -> None:
    from .camera import save_cameras
    from .harness.pipeline import build_dataset
    from .raster.imageio import save_png, save_raw
    from .scene import save_scene
    cfg = _config(args)
    root = Path(args.out or Path(cfg.out_dir) / "data")
    splits = ("train", "eval") if args.split == "all" else (args.split,)
    for split in splits:
        for i, s in enumerate(build_dataset(cfg, split)):
            d = root / split / f"{i:03d}"
            d.mkdir(parents=True, exist_ok=True)
            save_scene(s.gt, d / "scene.ply")
            save_cameras(s.input_cams, d / "input_cameras.txt")
            save_cameras(s.lr_cams, d / "lr_cameras.txt")
            save_cameras(s.target_cams, d / "target_cameras.txt")
            for v, img in enumerate(s.lr_images):
                save_png(img, d / f"lr_{v}.png")
                save_raw(img, d / f"lr_{v}.raw")
                save_raw(s.lr_depths[v], d / f"lr_depth_{v}.raw")
            for v, img in enumerate(s.targets):
                save_png(img, d / f"target_{v}.png")
    print(f"wrote {root}")


def cmd_pretrain_backbone(args) -> None:
    from .harness.pipeline import build_dataset, pretrain_backbone, save_backbone, write_csv
    cfg = _config(args)
    out = Path(args.out or Path(cfg.out_dir) / "backbone")
    backbone, losses = pretrain_backbone(cfg, build_dataset(cfg, "train"))
    save_backbone(backbone, out)
    write_csv(out / "loss.csv", ["step", "loss"], [{"step": i + 1, "loss": v} for i, v in enumerate(losses)])
    print(f"wrote {out}")


def cmd_densify(args) -> None:
    from .densify import expected_count, save_parent_index, shuffle_split
    from .scene import load_scene, save_scene
    cfg = _config(args)
    scene = load_scene(_require_file(args.input, "scene"))
    dense, parent = shuffle_split(scene, cfg.densify_config())
    assert len(dense) == expected_count(scene, cfg.densify_config())
    save_scene(dense, _out_path(args.out))
    if args.parent_index:
        save_parent_index(parent, _out_path(args.parent_index))
    print(f"{len(scene)} -> {len(dense)} primitives")


def _parse_background(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--background expects r,g,b floats, got {text!r}") from None
    if len(vals) != 3:
        raise UsageError(f"--background expects three values, got {text!r}")
    return vals


def cmd_render(args) -> None:
    from .camera import load_cameras
    from .raster import RenderTarget, render, render_depth
    from .raster.imageio import save_png, save_raw
    from .scene import load_scene
    cfg = _config(args)
    background = _parse_background(args.background)
    scene = load_scene(_require_file(args.scene, "scene"))
    cams = load_cameras(_require_file(args.camera, "camera file"))
    if not 0 <= args.view < len(cams):
        raise UsageError(f"--view {args.view} out of range for {len(cams)} cameras")
    cam = cams[args.view]
    target = RenderTarget.for_camera(cam, background)
    img = render(scene, cam, target, cfg.render_config())
    out = _out_path(args.out)
    (save_raw if out.suffix == ".raw" else save_png)(img, out)
    if args.depth:
        save_raw(render_depth(scene, cam, target, cfg.render_config()), _out_path(args.depth))
    print(f"wrote {out}")


def _prepared(cfg, split: str):
    from .harness.experiment import obtain_backbone
    from .harness.pipeline import build_dataset, prepare
    if cfg.backbone_checkpoint:
        _require_file(cfg.backbone_checkpoint, "backbone checkpoint")
    samples = build_dataset(cfg, "train")
    backbone = obtain_backbone(cfg, samples, Path(cfg.out_dir))
    if split != "train":
        samples = build_dataset(cfg, split)
    return [prepare(s, backbone, cfg) for s in samples]


def cmd_train(args) -> None:
    from .harness.pipeline import train
    cfg = _config(args)
    if args.resume:
        _require_file(args.resume, "resume checkpoint")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.cfg")
    train(cfg, _prepared(cfg, "train"), out, resume=args.resume)
    print(f"wrote {out / 'metrics.csv'} and {out / 'checkpoint'}")


def cmd_eval(args) -> None:
    from .harness.pipeline import EVAL_FIELDS, evaluate_baselines, evaluate_network, load_network, write_csv
    cfg = _config(args)
    if not cfg.checkpoint:
        raise UsageError("eval needs --checkpoint (or 'checkpoint' in the config)")
    _require_file(cfg.checkpoint, "checkpoint")
    net = load_network(cfg, cfg.checkpoint)
    prepared = _prepared(cfg, "eval")
    rows = evaluate_baselines(cfg, prepared)
    rows.append(evaluate_network(net, cfg, prepared, "full"))
    out = _out_path(args.out or Path(cfg.out_dir) / "eval.csv")
    write_csv(out, EVAL_FIELDS, rows)
    for r in rows:
        print(f"{r['variant']:>12s}  psnr {r['psnr']:.3f}  ssim {r['ssim']:.4f}  gaussians {r['gaussians']}")


def cmd_ablate(args) -> None:
    from .harness.experiment import VARIANTS, run_ablation
    cfg = _config(args)
    if cfg.backbone_checkpoint:
        _require_file(cfg.backbone_checkpoint, "backbone checkpoint")
    variants = VARIANTS
    if args.variants:
        names = args.variants.split(",")
        unknown = [n for n in names if n not in VARIANTS]
        if unknown:
            raise UsageError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
        variants = {n: VARIANTS[n] for n in names}
    res = run_ablation(cfg, cfg.out_dir, variants)
    for r in res.baselines + res.variants + res.upsamplers:
        print(f"{r['variant']:>16s}  psnr {r['psnr']:.3f}  ssim {r['ssim']:.4f}")


def cmd_inspect(args) -> None:
    import numpy as np
    from .scene import load_scene
    scene = load_scene(_require_file(args.scene, "scene"))
    n = len(scene)
    print(f"primitives: {n}")
    print(f"sh degree: {scene.sh_degree}")
    if n == 0:
        return
    thr = _config(args).opacity_threshold
    print(f"opacity > {thr}: {int(np.count_nonzero(scene.opacities > thr))}")
    lo, hi = scene.centers.min(axis=0), scene.centers.max(axis=0)
    print("bbox min: " + " ".join(f"{v:.6f}" for v in lo))
    print("bbox max: " + " ".join(f"{v:.6f}" for v in hi))
    print(f"scale mean: {float(scene.scales.mean()):.6f}")
    counts, edges = np.histogram(scene.opacities, bins=args.bins, range=(0.0, 1.0))
    print("opacity histogram:")
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        print(f"  [{a:.2f}, {b:.2f}{']' if b == 1.0 else ')'} {int(c)}")


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatsr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate the synthetic train/eval scenes and their images")
    p.add_argument("--out", help="output directory (default <out_dir>/data)")
    p.add_argument("--split", choices=("train", "eval", "all"), default="all")
    p = add("pretrain-backbone", cmd_pretrain_backbone, "pretrain the low-resolution backbone")
    p.add_argument("--out", help="checkpoint directory (default <out_dir>/backbone)")
    p = add("densify", cmd_densify, "shuffle-split every opaque Gaussian of a .ply scene")
    p.add_argument("--in", dest="input", required=True, help="input .ply scene")
    p.add_argument("--out", required=True, help="output .ply scene")
    p.add_argument("--parent-index", help="optional text file with one parent index per output")
    p = add("render", cmd_render, "render one camera of a .ply scene")
    p.add_argument("--scene", required=True, help="input .ply scene")
    p.add_argument("--camera", required=True, help="camera file, one camera per line")
    p.add_argument("--view", type=int, default=0, help="camera index")
    p.add_argument("--out", required=True, help="output image (.png, or .raw for float32)")
    p.add_argument("--depth", help="optional float32 depth output (.raw)")
    p.add_argument("--background", default="0,0,0", help="background color r,g,b in [0, 1]")
    p = add("train", cmd_train, "train the super-resolution network")
    p.add_argument("--resume", help="training checkpoint directory to resume from")
    p = add("eval", cmd_eval, "evaluate a checkpoint and the baselines on held-out scenes")
    p.add_argument("--out", help="metrics CSV (default <out_dir>/eval.csv)")
    p = add("ablate", cmd_ablate, "train and evaluate the single-switch-off variants and the upsampler swap")
    p.add_argument("--variants", help="comma-separated subset of full,no-refine,no-point-blocks,no-offset")
    p = add("inspect", cmd_inspect, "print scene statistics")
    p.add_argument("--scene", required=True, help="input .ply scene")
    p.add_argument("--bins", type=int, default=10, help="opacity histogram bins")
    for p in sub.choices.values():
        _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    try:
        _apply_threads()  # before the numeric libraries spin up their pools
    except UsageError as exc:
        print(f"splatsr: error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    from .harness.config import RunConfigError
    try:
        args.func(args)
    except (UsageError, RunConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"splatsr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: one-line diagnostic
        print(f"splatsr {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
