"""Cluttered digit-canvas benchmark generation.

Presence-domain images carry one complete, randomly positioned digit over a
background of small crops taken from other digits of the same fold; absence
images carry clutter only. Overlap regions are dithered per pixel so
occlusion boundaries carry no signal. Everything is materialized to disk
(8-bit grayscale PNGs plus a JSONL manifest) before training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .manifest import DatasetManifest, ExampleRecord, select_labeled_subset
from .seeds import derive_seed, derived_rng
from .sources import SPRITE_SIZE, DigitSource

CLUTTER_PRESETS = {
    "simple48": (48, 8),
    "hard48": (48, 24),
    "clutter128": (128, 80),
}


@dataclass
class ClutterSpec:
    """Generation parameters for one cluttered-canvas dataset."""

    image_size: int = 48
    n_clutter: int = 8
    crop_size: int = 10
    labeled_fraction: float = 0.01
    label_digit: int | None = 9
    n_train: int = 50000
    n_valid: int = 5000
    n_test: int = 5000

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "ClutterSpec":
        if name not in CLUTTER_PRESETS:
            raise ValueError(f"unknown clutter preset {name!r}")
        size, n_clutter = CLUTTER_PRESETS[name]
        return cls(image_size=size, n_clutter=n_clutter, **overrides)

    def fold_counts(self) -> dict[str, int]:
        return {"train": self.n_train, "valid": self.n_valid,
                "test": self.n_test}


class Layer(NamedTuple):
    """One sprite placed on the canvas; support is where sprite > 0."""

    sprite: np.ndarray
    top: int
    left: int


def dither_overlaps(layers: list[Layer], canvas_size: tuple[int, int],
                    rng: np.random.Generator) -> np.ndarray:
    """Composite sprite layers, resolving overlaps by per-pixel random choice.

    Pixels covered by a single layer take its value; pixels covered by
    several take the value of one contributing layer chosen uniformly at
    random, which removes crisp occlusion boundaries without changing the
    marginal intensity statistics. Sprites reaching past the canvas are
    clipped.
    """
    h, w = canvas_size
    values = np.zeros((len(layers), h, w), dtype=np.float64)
    support = np.zeros((len(layers), h, w), dtype=bool)
    for k, layer in enumerate(layers):
        sh, sw = layer.sprite.shape
        t0, l0 = max(layer.top, 0), max(layer.left, 0)
        t1, l1 = min(layer.top + sh, h), min(layer.left + sw, w)
        if t0 >= t1 or l0 >= l1:
            continue
        patch = layer.sprite[t0 - layer.top:t1 - layer.top,
                             l0 - layer.left:l1 - layer.left]
        values[k, t0:t1, l0:l1] = patch
        support[k, t0:t1, l0:l1] = patch > 0
    counts = support.sum(axis=0)
    # Uniform pick among contributors: rank each contributing layer per
    # pixel and select the rank drawn from U{0..count-1}.
    pick = np.floor(rng.random((h, w)) * np.maximum(counts, 1)).astype(int)
    rank = np.cumsum(support, axis=0) - 1
    selected = support & (rank == pick)
    return (values * selected).sum(axis=0)


def _random_crop(images: np.ndarray, rng: np.random.Generator,
                 crop: int) -> np.ndarray:
    idx = int(rng.integers(len(images)))
    top = int(rng.integers(SPRITE_SIZE - crop + 1))
    left = int(rng.integers(SPRITE_SIZE - crop + 1))
    return images[idx, top:top + crop, left:left + crop]


def _compose_example(spec: ClutterSpec, images: np.ndarray,
                     labels: np.ndarray, rng: np.random.Generator,
                     with_digit: bool):
    """Build one canvas; returns (image uint8, mask uint8 | None, class)."""
    size = spec.image_size
    layers: list[Layer] = []
    digit_class = None
    mask = None
    if with_digit:
        idx = int(rng.integers(len(images)))
        digit_class = int(labels[idx])
        sprite = images[idx].astype(np.float64)
        top = int(rng.integers(size - SPRITE_SIZE + 1))
        left = int(rng.integers(size - SPRITE_SIZE + 1))
        layers.append(Layer(sprite, top, left))
        mask = np.zeros((size, size), dtype=np.uint8)
        mask[top:top + SPRITE_SIZE, left:left + SPRITE_SIZE] = \
            (sprite > 0).astype(np.uint8) * 255
    for _ in range(spec.n_clutter):
        crop = _random_crop(images, rng, spec.crop_size).astype(np.float64)
        # Clutter may extend past the canvas edges (clipped at paint time).
        top = int(rng.integers(-spec.crop_size + 1, size))
        left = int(rng.integers(-spec.crop_size + 1, size))
        layers.append(Layer(crop, top, left))
    canvas = dither_overlaps(layers, (size, size), rng)
    return np.clip(canvas, 0, 255).astype(np.uint8), mask, digit_class


def _save_png(array: np.ndarray, path: Path) -> None:
    Image.fromarray(array, mode="L").save(path)


def generate_cluttered_mnist(spec: ClutterSpec, source: DigitSource,
                             master_seed: int,
                             out_dir: str | Path) -> DatasetManifest:
    """Materialize a full presence/absence dataset and its manifest.

    Per-example RNGs are derived from (master seed, fold, domain, index), so
    regeneration with the same inputs is byte-identical and examples can be
    produced in any order.
    """
    out_dir = Path(out_dir)
    records: list[ExampleRecord] = []
    for fold, count in spec.fold_counts().items():
        images, labels = source.fold(fold)
        fold_dir = out_dir / fold
        fold_dir.mkdir(parents=True, exist_ok=True)
        for domain in ("P", "A"):
            for index in range(count):
                rng = derived_rng(master_seed, fold, domain, index)
                img, mask, digit_class = _compose_example(
                    spec, images, labels, rng, with_digit=domain == "P")
                stem = f"{domain.lower()}_{index:06d}"
                img_rel = f"{fold}/{stem}.png"
                _save_png(img, out_dir / img_rel)
                mask_rel = None
                if mask is not None:
                    mask_rel = f"{fold}/{stem}_mask.png"
                    _save_png(mask, out_dir / mask_rel)
                records.append(ExampleRecord(
                    image_path=img_rel, domain=domain, fold=fold,
                    mask_path=mask_rel, digit_class=digit_class))
    manifest = DatasetManifest(spec=asdict(spec), seed=master_seed,
                               records=records, root=out_dir)
    select_labeled_subset(manifest, spec.labeled_fraction, spec.label_digit,
                          seed=derive_seed(master_seed, "labeled-subset"))
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def load_image(path: Path) -> np.ndarray:
    """PNG byte intensities mapped to the [-1, 1] model input space."""
    raw = np.asarray(Image.open(path), dtype=np.float32)
    return raw / 127.5 - 1.0


def load_mask(path: Path) -> np.ndarray:
    return (np.asarray(Image.open(path)) > 127).astype(np.float32)
