"""Experiment configuration.

A nested YAML file maps onto the dataclasses below; every published
hyperparameter is a named key whose default is the published value. The
``TRANSLSEG_RUN_ROOT`` environment variable overrides the run output root.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from ..data.augment import AugmentConfig
from ..losses import LossWeights
from ..model import VARIANTS, OptimizerConfig

RUN_ROOT_ENV = "TRANSLSEG_RUN_ROOT"


class ConfigError(ValueError):
    """Unknown keys, bad values, or missing files in a config."""


@dataclass
class TrainingConfig:
    """Loop shape: epochs, batching, seeds, and bookkeeping cadence."""

    epochs: int = 300              # published MNIST default; brats runs use 500
    batch_size: int = 20
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    min_labeled_per_batch: int = 1
    augment: bool = False          # on for brain data, off for digit canvases
    checkpoint_every: int = 25
    eval_every: int = 1

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("training.seeds must be nonempty")
        if self.batch_size < 1:
            raise ConfigError("training.batch_size must be positive")
        if self.epochs < 0:
            raise ConfigError("training.epochs must be nonnegative")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    manifest: str
    variant: str = "proposed"
    preset: str = "mnist48"
    run_root: str = "runs"
    run_name: Optional[str] = None
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    augment_params: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")

    def resolved_run_root(self) -> Path:
        return Path(os.environ.get(RUN_ROOT_ENV, self.run_root))

    def run_dir(self) -> Path:
        name = self.run_name or f"{self.preset}-{self.variant}"
        return self.resolved_run_root() / name

    def validate_paths(self) -> None:
        if not Path(self.manifest).exists():
            raise ConfigError(f"manifest not found: {self.manifest}")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "weights": LossWeights,
    "optimizer": OptimizerConfig,
    "training": TrainingConfig,
    "augment_params": AugmentConfig,
}


def _build_section(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad {where} section: {err}") from err


def default_weights_for_variant(variant: str) -> LossWeights:
    if variant == "ae_baseline":
        return LossWeights.ae_defaults()
    if variant == "seg_only":
        return LossWeights.seg_only_defaults()
    return LossWeights.proposed_defaults()


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    variant = data.get("variant", "proposed")
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.pop(name, None)
        if raw is None:
            sections[name] = (default_weights_for_variant(variant)
                              if name == "weights" else cls())
        else:
            if not isinstance(raw, dict):
                raise ConfigError(f"{name} must be a mapping")
            if name == "weights":
                base = asdict(default_weights_for_variant(variant))
                base.update(raw)
                raw = base
            sections[name] = _build_section(cls, raw, name)
    allowed = {f.name for f in fields(ExperimentConfig)} - set(_SECTIONS)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "manifest" not in data:
        raise ConfigError("config requires a manifest path")
    return ExperimentConfig(**data, **sections)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a YAML mapping")
    return config_from_dict(data)


def dump_config(config: ExperimentConfig, path: Optional[Path] = None) -> str:
    text = yaml.safe_dump(config.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def default_config_yaml(variant: str = "proposed") -> str:
    """The full schema with published defaults, ready to edit."""
    cfg = ExperimentConfig(manifest="path/to/manifest.jsonl",
                           variant=variant,
                           weights=default_weights_for_variant(variant))
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
