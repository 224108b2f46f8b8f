"""On-disk dataset manifests.

A manifest is a JSONL file: one header object recording the generation spec
and master seed, then one object per example. Image paths are stored
relative to the manifest's directory so datasets can be moved wholesale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image

MANIFEST_VERSION = 1
FOLDS = ("train", "valid", "test")
DOMAINS = ("P", "A")


class ManifestError(ValueError):
    """Malformed manifest file or invariant violation."""


@dataclass
class ExampleRecord:
    """One dataset example: image, optional mask, and its metadata."""

    image_path: str
    domain: str
    fold: str
    mask_path: Optional[str] = None
    digit_class: Optional[int] = None
    labeled: bool = False

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise ManifestError(f"bad domain {self.domain!r}")
        if self.fold not in FOLDS:
            raise ManifestError(f"bad fold {self.fold!r}")
        if self.domain == "A" and (self.mask_path or
                                   self.digit_class is not None):
            raise ManifestError("absence examples carry no mask or class")
        if self.labeled and (self.domain != "P" or not self.mask_path):
            raise ManifestError("labeled examples must be P with a mask")


@dataclass
class DatasetManifest:
    """Header (spec + seed) plus the full example list."""

    spec: dict
    seed: int
    records: list[ExampleRecord] = field(default_factory=list)
    root: Optional[Path] = None

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            header = {"kind": "header", "version": MANIFEST_VERSION,
                      "spec": self.spec, "seed": self.seed}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        path = Path(path)
        with open(path) as fh:
            lines = [line for line in fh if line.strip()]
        if not lines:
            raise ManifestError(f"{path}: empty manifest")
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise ManifestError(f"{path}: first line is not a header")
        if header.get("version") != MANIFEST_VERSION:
            raise ManifestError(
                f"{path}: unsupported manifest version {header.get('version')}")
        records = [ExampleRecord(**json.loads(line)) for line in lines[1:]]
        return cls(spec=header["spec"], seed=header["seed"], records=records,
                   root=path.parent)

    # -- selection helpers ----------------------------------------------------

    def select(self, fold: Optional[str] = None, domain: Optional[str] = None,
               labeled: Optional[bool] = None) -> list[ExampleRecord]:
        out = self.records
        if fold is not None:
            out = [r for r in out if r.fold == fold]
        if domain is not None:
            out = [r for r in out if r.domain == domain]
        if labeled is not None:
            out = [r for r in out if r.labeled == labeled]
        return out

    def resolve(self, rel_path: str) -> Path:
        if self.root is None:
            raise ManifestError("manifest has no root directory")
        return self.root / rel_path

    def iter_with_index(self) -> Iterator[tuple[int, ExampleRecord]]:
        return enumerate(self.records)


def _load_array(path: Path) -> np.ndarray:
    """Read an example file as (H, W) or (C, H, W), by extension."""
    if path.suffix == ".bin":
        from .brats import read_half_slice
        return read_half_slice(path)
    return np.asarray(Image.open(path))


def validate_manifest(manifest: DatasetManifest) -> list[str]:
    """Machine-check the dataset invariants; returns a list of problems.

    Every P example must have a nonempty mask, A examples must have none,
    labeled flags must point at train-fold P examples, and every referenced
    file must exist.
    """
    problems: list[str] = []
    for i, rec in manifest.iter_with_index():
        where = f"record {i} ({rec.image_path})"
        img = manifest.resolve(rec.image_path)
        if not img.exists():
            problems.append(f"{where}: image file missing")
            continue
        if rec.domain == "P":
            if not rec.mask_path:
                problems.append(f"{where}: P example without mask")
                continue
            mask_file = manifest.resolve(rec.mask_path)
            if not mask_file.exists():
                problems.append(f"{where}: mask file missing")
                continue
            mask = _load_array(mask_file)
            if not (mask > 0).any():
                problems.append(f"{where}: empty mask")
            img_arr = _load_array(img)
            if mask.shape[-2:] != img_arr.shape[-2:]:
                problems.append(f"{where}: mask/image shape mismatch")
        else:
            if rec.mask_path:
                problems.append(f"{where}: A example with a mask")
    return problems


def select_labeled_subset(manifest: DatasetManifest, fraction: float = 0.01,
                          class_filter: Optional[int] = 9,
                          seed: int = 0) -> DatasetManifest:
    """Mark round(fraction * |train P|) examples as labeled.

    Candidates are train-fold P examples, restricted to ``class_filter``
    when given (the one-digit-class labeling protocol); drawn uniformly
    without replacement. All other records end up labeled=False.
    """
    train_p = [(i, r) for i, r in manifest.iter_with_index()
               if r.fold == "train" and r.domain == "P"]
    target = int(round(fraction * len(train_p)))
    eligible = [(i, r) for i, r in train_p
                if class_filter is None or r.digit_class == class_filter]
    if target > len(eligible):
        raise ManifestError(
            f"need {target} labeled examples but only {len(eligible)} "
            f"eligible (deficit {target - len(eligible)})")
    rng = np.random.default_rng(seed)
    chosen = set()
    if target > 0:
        idx = rng.choice(len(eligible), size=target, replace=False)
        chosen = {eligible[int(j)][0] for j in idx}
    for i, rec in manifest.iter_with_index():
        rec.labeled = i in chosen
    return manifest
