"""Checkpointing with a versioned, self-describing payload.

A checkpoint rebuilds the model from scratch (preset + variant travel with
the weights), restores optimizer state, the unique-code noise generator,
and the epoch counter, so a resumed run continues bit-exactly.
"""

from __future__ import annotations

import os
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import torch

from ..model import OptimizerConfig, TranslationModel, build_optimizers
from ..networks import ArchitecturePreset

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or version-incompatible checkpoint."""


def save_checkpoint(path: str | Path, model: TranslationModel,
                    optimizers: dict[str, torch.optim.Optimizer],
                    noise_generator: torch.Generator, epoch: int,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "variant": model.variant,
        "preset": asdict(model.preset),
        "model_state": model.state_dict(),
        "optimizer_states": {name: opt.state_dict()
                             for name, opt in optimizers.items()},
        "noise_rng_state": noise_generator.get_state(),
        "epoch": epoch,
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as err:
        raise CheckpointError(f"{path}: unreadable checkpoint: {err}") from err
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path}: not a checkpoint payload")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {payload['version']} != supported "
            f"{CHECKPOINT_VERSION}")
    return payload


def restore_model(payload: dict) -> TranslationModel:
    preset = ArchitecturePreset(**payload["preset"])
    model = TranslationModel(preset, variant=payload["variant"])
    model.load_state_dict(payload["model_state"])
    return model


def restore_training_state(
        payload: dict, optimizer_cfg: OptimizerConfig
) -> tuple[TranslationModel, dict[str, torch.optim.Optimizer],
           torch.Generator, int]:
    model = restore_model(payload)
    optimizers = build_optimizers(model, optimizer_cfg)
    for name, opt in optimizers.items():
        if name in payload["optimizer_states"]:
            opt.load_state_dict(payload["optimizer_states"][name])
    noise_generator = torch.Generator()
    noise_generator.set_state(payload["noise_rng_state"])
    return model, optimizers, noise_generator, payload["epoch"]


def checkpoint_roundtrip(model: TranslationModel,
                         optimizers: dict[str, torch.optim.Optimizer],
                         noise_generator: torch.Generator, epoch: int,
                         path: str | Path) -> TranslationModel:
    """Save then reload; callers can probe outputs before/after."""
    save_checkpoint(path, model, optimizers, noise_generator, epoch)
    return restore_model(load_checkpoint(path))
