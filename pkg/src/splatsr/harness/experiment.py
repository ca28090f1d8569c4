"""Component ablation and upsampler swap over one shared dataset and backbone."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .pipeline import (EVAL_FIELDS, build_dataset, evaluate_baselines, evaluate_network, load_backbone,
                       prepare, pretrain_backbone, save_backbone, train, write_csv)

log = logging.getLogger(__name__)

# single-switch-off variants of the full model
VARIANTS: dict[str, dict] = {
    "full": {},
    "no-refine": {"use_refine": False},
    "no-point-blocks": {"use_point_blocks": False},
    "no-offset": {"use_offsets": False},
}
UPSAMPLERS = ("bilinear", "bicubic")


@dataclass
class AblationResult:
    baselines: list[dict] = field(default_factory=list)
    variants: list[dict] = field(default_factory=list)
    upsamplers: list[dict] = field(default_factory=list)

    def row(self, name: str) -> dict:
        for r in self.baselines + self.variants + self.upsamplers:
            if r["variant"] == name:
                return r
        raise KeyError(name)


def obtain_backbone(cfg: RunConfig, train_samples, out: Path):
    if cfg.backbone_checkpoint:
        return load_backbone(cfg, cfg.backbone_checkpoint)
    backbone, losses = pretrain_backbone(cfg, train_samples)
    save_backbone(backbone, out / "backbone")
    write_csv(out / "backbone_loss.csv", ["step", "loss"],
              [{"step": i + 1, "loss": v} for i, v in enumerate(losses)])
    return backbone


def run_ablation(cfg: RunConfig, out_dir, variants: dict[str, dict] | None = None,
                 rerun_full: bool = False) -> AblationResult:
    """Train every variant from the same seed, then evaluate on held-out scenes.

    Writes ``baselines.csv``, ``ablation.csv`` and ``upsampler.csv`` plus one
    run directory per variant. With ``rerun_full`` the full model is trained a
    second time into ``full-rerun/`` for reproducibility checks.
    """
    variants = VARIANTS if variants is None else variants
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.validate()
    cfg.save(out / "config.cfg")
    train_samples = build_dataset(cfg, "train")
    eval_samples = build_dataset(cfg, "eval")
    backbone = obtain_backbone(cfg, train_samples, out)
    train_prep = [prepare(s, backbone, cfg) for s in train_samples]
    eval_prep = [prepare(s, backbone, cfg) for s in eval_samples]

    result = AblationResult(baselines=evaluate_baselines(cfg, eval_prep))
    write_csv(out / "baselines.csv", EVAL_FIELDS, result.baselines)
    runs = list(variants.items())
    if rerun_full and "full" in variants:
        runs.append(("full-rerun", variants["full"]))
    for name, switches in runs:
        vcfg = cfg.replace(**switches)
        log.info("training variant %s", name)
        net = train(vcfg, train_prep, out / name)
        if name == "full-rerun":
            continue
        result.variants.append(evaluate_network(net, vcfg, eval_prep, name))
        write_csv(out / "ablation.csv", EVAL_FIELDS, result.variants)
        if name == "full":
            result.upsamplers = [evaluate_network(net, vcfg, eval_prep, f"full-{u}", u) for u in UPSAMPLERS]
            write_csv(out / "upsampler.csv", EVAL_FIELDS, result.upsamplers)
    return result


def config_digest(cfg: RunConfig) -> str:
    import hashlib
    # output locations do not change results
    text = cfg.replace(out_dir="", checkpoint="").to_text()
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def read_result(out_dir) -> AblationResult:
    from .pipeline import read_csv
    out = Path(out_dir)
    return AblationResult(read_csv(out / "baselines.csv"), read_csv(out / "ablation.csv"),
                          read_csv(out / "upsampler.csv"))


def cached_ablation(cfg: RunConfig, cache_root) -> tuple[Path, AblationResult]:
    """Run the ablation with a full rerun once per config; later calls reuse the results."""
    out = Path(cache_root) / config_digest(cfg)
    done = out / "DONE"
    if not done.is_file():
        run_ablation(cfg, out, rerun_full=True)
        done.write_text("ok\n")
    return out, read_result(out)
