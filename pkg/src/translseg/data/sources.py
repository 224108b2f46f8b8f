"""Digit sprite sources for the cluttered-canvas benchmark.

Two interchangeable sources: a loader for the standard IDX image/label
files, and a fully synthetic seven-segment glyph renderer with per-sample
affine jitter for environments without the real digit corpus. Both yield
uint8 28x28 sprites partitioned into train/valid/test folds.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .seeds import derived_rng

SPRITE_SIZE = 28

# Seven-segment layout on the 28x28 canvas: (row0, row1, col0, col1) spans.
_SEGMENTS = {
    "a": (4, 7, 9, 20),
    "b": (4, 15, 16, 20),
    "c": (13, 24, 16, 20),
    "d": (21, 24, 9, 20),
    "e": (13, 24, 9, 13),
    "f": (4, 15, 9, 13),
    "g": (12, 15, 9, 20),
}
_DIGIT_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abcfgd",
}


@dataclass
class DigitSource:
    """Per-fold digit sprites: fold -> (images uint8 (N,28,28), labels (N,))."""

    folds: dict[str, tuple[np.ndarray, np.ndarray]]

    def fold(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.folds:
            raise KeyError(f"source has no fold {name!r}")
        images, labels = self.folds[name]
        if len(images) == 0:
            raise ValueError(f"fold {name!r} is empty")
        return images, labels


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code != 0x08:
        raise ValueError(f"{path}: not an unsigned-byte IDX file")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    array = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    return array.reshape(dims)


def _find_idx(directory: Path, stem: str) -> Path:
    for suffix in ("", ".gz"):
        candidate = directory / f"{stem}{suffix}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


def load_idx_source(directory: str | Path,
                    valid_count: int = 5000) -> DigitSource:
    """Load the standard four IDX files, carving a validation fold off the
    end of the training split."""
    directory = Path(directory)
    train_images = _read_idx(_find_idx(directory, "train-images-idx3-ubyte"))
    train_labels = _read_idx(_find_idx(directory, "train-labels-idx1-ubyte"))
    test_images = _read_idx(_find_idx(directory, "t10k-images-idx3-ubyte"))
    test_labels = _read_idx(_find_idx(directory, "t10k-labels-idx1-ubyte"))
    if valid_count >= len(train_images):
        raise ValueError("validation fold would consume the whole train set")
    split = len(train_images) - valid_count
    return DigitSource(folds={
        "train": (train_images[:split], train_labels[:split]),
        "valid": (train_images[split:], train_labels[split:]),
        "test": (test_images, test_labels),
    })


def _render_glyph(digit: int) -> np.ndarray:
    sprite = np.zeros((SPRITE_SIZE, SPRITE_SIZE), dtype=np.float64)
    for name in _DIGIT_SEGMENTS[digit]:
        r0, r1, c0, c1 = _SEGMENTS[name]
        sprite[r0:r1, c0:c1] = 1.0
    return sprite


def _jitter(sprite: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(-12.0, 12.0)
    scale = rng.uniform(0.85, 1.15)
    shift = rng.uniform(-2.0, 2.0, size=2)
    center = (SPRITE_SIZE - 1) / 2.0
    theta = np.deg2rad(angle)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]]) / scale
    offset = np.array([center, center]) - rot @ (
        np.array([center, center]) + shift)
    warped = ndimage.affine_transform(sprite, rot, offset=offset, order=1,
                                      cval=0.0)
    peak = rng.uniform(0.6, 1.0)
    return np.clip(warped * peak * 255.0, 0, 255).astype(np.uint8)


def synthetic_digit_source(per_fold: dict[str, int] | int,
                           seed: int = 0) -> DigitSource:
    """Render jittered seven-segment glyphs, balanced across the ten classes.

    ``per_fold`` is either one count used for every fold or a mapping of
    fold name to count. Deterministic for a fixed seed.
    """
    if isinstance(per_fold, int):
        per_fold = {"train": per_fold, "valid": per_fold, "test": per_fold}
    folds = {}
    for fold_name, count in per_fold.items():
        rng = derived_rng(seed, "synthetic-digits", fold_name)
        images = np.zeros((count, SPRITE_SIZE, SPRITE_SIZE), dtype=np.uint8)
        labels = np.zeros(count, dtype=np.int64)
        for i in range(count):
            digit = i % 10
            images[i] = _jitter(_render_glyph(digit), rng)
            labels[i] = digit
        order = rng.permutation(count)
        folds[fold_name] = (images[order], labels[order])
    return DigitSource(folds=folds)
