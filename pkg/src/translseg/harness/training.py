"""Experiment orchestration: the epoch loop, metrics, checkpoints, reports.

One experiment trains the configured variant once per seed, logs one
metrics record per epoch (JSONL, deterministic for a fixed config and
seed; wall-clock timings go to a separate sidecar), checkpoints
periodically and at the best validation Dice, and finally aggregates
mean/std test Dice across seeds into a JSON report plus a plain-text
table.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import yaml

from ..data.augment import AugmentConfig
from ..data.batches import TrainingBatcher
from ..data.manifest import DatasetManifest
from ..data.seeds import derive_seed
from ..model import TranslationModel, build_optimizers, training_step
from ..networks import preset as lookup_preset
from .checkpoint import (
    load_checkpoint,
    restore_model,
    restore_training_state,
    save_checkpoint,
)
from .config import ExperimentConfig
from .evaluation import evaluate

logger = logging.getLogger(__name__)


def config_fingerprint(config: ExperimentConfig,
                       manifest: DatasetManifest) -> str:
    blob = json.dumps({"config": config.to_dict(),
                       "dataset": {"spec": manifest.spec,
                                   "seed": manifest.seed,
                                   "n": len(manifest.records)}},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parameter_count(model: TranslationModel) -> int:
    return sum(p.numel() for p in model.parameters())


class _Jsonl:
    def __init__(self, path: Path, append: bool = False) -> None:
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not append:
            self.path.write_text("")

    def write(self, record: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def train_one_seed(config: ExperimentConfig, manifest: DatasetManifest,
                   seed: int, seed_dir: Path,
                   resume: Optional[Path] = None) -> dict:
    """Train one seed to completion; returns its summary dict."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    tcfg = config.training
    fingerprint = config_fingerprint(config, manifest)

    start_epoch = 0
    if resume is not None:
        payload = load_checkpoint(resume)
        model, optimizers, noise_gen, start_epoch = restore_training_state(
            payload, config.optimizer)
        saved = payload["extra"].get("fingerprint")
        if saved is not None and saved != fingerprint:
            logger.warning(
                "resume fingerprint mismatch: checkpoint %s vs config %s",
                saved, fingerprint)
            (seed_dir / "warnings.log").open("a").write(
                f"fingerprint mismatch: {saved} != {fingerprint}\n")
        best_val = payload["extra"].get("best_val", -1.0)
    else:
        model = TranslationModel(lookup_preset(config.preset),
                                 config.variant).initialize(seed)
        optimizers = build_optimizers(model, config.optimizer)
        noise_gen = torch.Generator().manual_seed(derive_seed(seed, "noise"))
        best_val = -1.0

    augment_cfg: Optional[AugmentConfig] = (
        config.augment_params if tcfg.augment else None)
    batcher = TrainingBatcher(
        manifest, tcfg.batch_size,
        min_labeled_per_batch=tcfg.min_labeled_per_batch,
        seed=derive_seed(seed, "batches"), augment_cfg=augment_cfg)

    metrics = _Jsonl(seed_dir / "metrics.jsonl", append=resume is not None)
    timings = _Jsonl(seed_dir / "timings.jsonl", append=resume is not None)
    global_step = start_epoch * batcher.steps_per_epoch

    for epoch in range(start_epoch, tcfg.epochs):
        t0 = time.monotonic()
        sums: dict[str, float] = {}
        n_steps = 0
        for batch in batcher.epoch(epoch):
            report = training_step(model, batch.x_p, batch.x_a, batch.masks,
                                   batch.labeled, optimizers, config.weights,
                                   noise_gen)
            for key, value in report.terms.items():
                sums[key] = sums.get(key, 0.0) + value
            n_steps += 1
            global_step += 1
        record = {"seed": seed, "epoch": epoch, "step": global_step,
                  "losses": {k: v / n_steps for k, v in sorted(sums.items())}}
        if tcfg.eval_every and (epoch + 1) % tcfg.eval_every == 0:
            val = evaluate(model, manifest, "valid",
                           batch_size=tcfg.batch_size)
            record["val_dice"] = val["dice_mean_per_image"]
            record["val_dice_aggregate"] = val["dice_aggregate"]
            if val["dice_mean_per_image"] > best_val:
                best_val = val["dice_mean_per_image"]
                save_checkpoint(seed_dir / "best.pt", model, optimizers,
                                noise_gen, epoch + 1,
                                extra={"fingerprint": fingerprint,
                                       "best_val": best_val, "seed": seed})
        metrics.write(record)
        timings.write({"epoch": epoch, "seconds": time.monotonic() - t0})
        if tcfg.checkpoint_every and \
                (epoch + 1) % tcfg.checkpoint_every == 0:
            save_checkpoint(seed_dir / f"epoch{epoch + 1:04d}.pt", model,
                            optimizers, noise_gen, epoch + 1,
                            extra={"fingerprint": fingerprint,
                                   "best_val": best_val, "seed": seed})

    save_checkpoint(seed_dir / "last.pt", model, optimizers, noise_gen,
                    tcfg.epochs, extra={"fingerprint": fingerprint,
                                        "best_val": best_val, "seed": seed})
    # Test with the best validation checkpoint when one exists.
    test_model = model
    if (seed_dir / "best.pt").exists():
        test_model = restore_model(load_checkpoint(seed_dir / "best.pt"))
    test = evaluate(test_model, manifest, "test", batch_size=tcfg.batch_size)
    summary = {"seed": seed, "best_val_dice": best_val,
               "test_dice": test["dice_mean_per_image"],
               "test_dice_aggregate": test["dice_aggregate"],
               "n_test": test["n"],
               "parameter_count": parameter_count(model)}
    (seed_dir / "summary.json").write_text(json.dumps(summary, indent=2,
                                                      sort_keys=True))
    return summary


def aggregate_report(config: ExperimentConfig,
                     summaries: list[dict]) -> dict:
    dices = [s["test_dice"] for s in summaries]
    std = float(np.std(dices, ddof=1)) if len(dices) > 1 else 0.0
    return {
        "variant": config.variant,
        "preset": config.preset,
        "parameter_count": summaries[0]["parameter_count"],
        "seeds": [s["seed"] for s in summaries],
        "per_seed": summaries,
        "test_dice_mean": float(np.mean(dices)),
        "test_dice_std": std,
        "test_dice_aggregate_mean": float(np.mean(
            [s["test_dice_aggregate"] for s in summaries])),
    }


def render_table(reports: list[dict]) -> str:
    """Plain-text 'mean (standard deviation)' table over one or more runs."""
    width = max(len(r["variant"]) for r in reports) + 2
    lines = [f"{'variant':<{width}}test Dice (per-image mean)"]
    for r in reports:
        lines.append(f"{r['variant']:<{width}}"
                     f"{r['test_dice_mean']:.3f} ({r['test_dice_std']:.3f})")
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig,
                   resume: Optional[Path] = None,
                   only_seed: Optional[int] = None) -> Path:
    """Run every configured seed sequentially; returns the run directory."""
    config.validate_paths()
    manifest = DatasetManifest.load(Path(config.manifest))
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(
        yaml.safe_dump(config.to_dict(), sort_keys=False))

    seeds = [only_seed] if only_seed is not None else config.training.seeds
    summaries = []
    for seed in seeds:
        seed_dir = run_dir / f"seed{seed}"
        logger.info("training variant=%s preset=%s seed=%d",
                    config.variant, config.preset, seed)
        summaries.append(train_one_seed(config, manifest, seed, seed_dir,
                                        resume=resume))
        resume = None  # a resume checkpoint applies to the first seed only
    report = aggregate_report(config, summaries)
    (run_dir / "report.json").write_text(json.dumps(report, indent=2,
                                                    sort_keys=True))
    (run_dir / "report.txt").write_text(render_table([report]))
    logger.info("run complete: %s", run_dir)
    return run_dir
