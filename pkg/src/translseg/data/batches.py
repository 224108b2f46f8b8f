"""Deterministic batch assembly for training and evaluation.

Presence batches drive the epoch length (ceil(|train P| / batch size));
absence batches cycle through their own independently reshuffled stream.
Each presence batch can be guaranteed a minimum number of labeled examples
by resampling from the labeled pool with replacement. All ordering derives
from (master seed, epoch), so runs are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
import torch

from .augment import AugmentConfig, augment
from .manifest import DatasetManifest, ExampleRecord
from .mnist import load_image, load_mask
from .seeds import derive_seed, derived_rng


@dataclass
class Batch:
    """One training step's worth of data."""

    x_p: torch.Tensor
    x_a: torch.Tensor
    masks: torch.Tensor
    labeled: torch.Tensor


def load_example(manifest: DatasetManifest, record: ExampleRecord,
                 with_mask: bool = False
                 ) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Read one example as float32 (C, H, W) in model input space."""
    path = manifest.resolve(record.image_path)
    if path.suffix == ".bin":
        from .brats import read_half_slice
        image = read_half_slice(path)
    else:
        image = load_image(path)[None]
    mask = None
    if with_mask and record.mask_path:
        mask_path = manifest.resolve(record.mask_path)
        if mask_path.suffix == ".bin":
            from .brats import read_half_slice
            mask = read_half_slice(mask_path)[0]
        else:
            mask = load_mask(mask_path)
    return image, mask


class TrainingBatcher:
    """Assembles aligned presence/absence batches from one manifest."""

    def __init__(self, manifest: DatasetManifest, batch_size: int,
                 min_labeled_per_batch: int = 1, seed: int = 0,
                 augment_cfg: Optional[AugmentConfig] = None) -> None:
        self.manifest = manifest
        self.batch_size = batch_size
        self.min_labeled = min_labeled_per_batch
        self.seed = seed
        self.augment_cfg = augment_cfg
        self.p_indices = [i for i, r in manifest.iter_with_index()
                          if r.fold == "train" and r.domain == "P"]
        self.a_indices = [i for i, r in manifest.iter_with_index()
                          if r.fold == "train" and r.domain == "A"]
        self.labeled_pool = [i for i in self.p_indices
                             if manifest.records[i].labeled]
        if not self.p_indices or not self.a_indices:
            raise ValueError("training requires both P and A train examples")
        if self.min_labeled > 0 and not self.labeled_pool:
            raise ValueError(
                "min_labeled_per_batch > 0 but the manifest has no labeled "
                "examples")

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.p_indices) / self.batch_size)

    def _epoch_order(self, pool: list[int], epoch: int, tag: str,
                     size: int) -> list[int]:
        rng = derived_rng(self.seed, "order", tag, epoch)
        order: list[int] = []
        while len(order) < size:
            order.extend(int(pool[j]) for j in rng.permutation(len(pool)))
        return order[:size]

    def _guarantee_labeled(self, chunk: list[int], rng) -> list[int]:
        have = sum(1 for i in chunk if self.manifest.records[i].labeled)
        need = self.min_labeled - have
        if need <= 0:
            return chunk
        chunk = list(chunk)
        unlabeled_slots = [k for k, i in enumerate(chunk)
                           if not self.manifest.records[i].labeled]
        slots = rng.choice(len(unlabeled_slots), size=min(need,
                                                          len(unlabeled_slots)),
                           replace=False)
        for s in slots:
            pick = int(rng.integers(len(self.labeled_pool)))
            chunk[unlabeled_slots[int(s)]] = self.labeled_pool[pick]
        return chunk

    def _tensorize(self, indices: list[int], epoch: int,
                   with_masks: bool) -> tuple[torch.Tensor, ...]:
        images, masks, labeled = [], [], []
        for i in indices:
            rec = self.manifest.records[i]
            use_mask = with_masks and rec.labeled
            img, mask = load_example(self.manifest, rec, with_mask=use_mask)
            if self.augment_cfg is not None:
                img, mask = augment(img, mask, self.augment_cfg,
                                    derive_seed(self.seed, "augment", epoch, i))
            images.append(torch.from_numpy(np.ascontiguousarray(img)))
            labeled.append(bool(rec.labeled) and with_masks)
            if with_masks:
                if mask is None:
                    mask = np.zeros(img.shape[-2:], dtype=np.float32)
                masks.append(torch.from_numpy(
                    np.ascontiguousarray(mask))[None])
        x = torch.stack(images).float()
        if not with_masks:
            return (x,)
        return (x, torch.stack(masks).float(),
                torch.tensor(labeled, dtype=torch.bool))

    def epoch(self, epoch: int) -> Iterator[Batch]:
        n = self.steps_per_epoch * self.batch_size
        p_order = self._epoch_order(self.p_indices, epoch, "P", n)
        a_order = self._epoch_order(self.a_indices, epoch, "A", n)
        fill_rng = derived_rng(self.seed, "labeled-fill", epoch)
        for step in range(self.steps_per_epoch):
            sl = slice(step * self.batch_size, (step + 1) * self.batch_size)
            p_chunk = self._guarantee_labeled(p_order[sl], fill_rng)
            x_p, masks, labeled = self._tensorize(p_chunk, epoch,
                                                  with_masks=True)
            (x_a,) = self._tensorize(a_order[sl], epoch, with_masks=False)
            yield Batch(x_p=x_p, x_a=x_a, masks=masks, labeled=labeled)


def evaluation_batches(manifest: DatasetManifest, fold: str,
                       batch_size: int = 20
                       ) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
    """Yield (images, masks) over the fold's P examples in manifest order."""
    records = manifest.select(fold=fold, domain="P")
    if not records:
        raise ValueError(f"fold {fold!r} has no presence examples")
    for start in range(0, len(records), batch_size):
        group = records[start:start + batch_size]
        images, masks = [], []
        for rec in group:
            img, mask = load_example(manifest, rec, with_mask=True)
            if mask is None:
                raise ValueError(f"{rec.image_path}: evaluation needs masks")
            images.append(torch.from_numpy(np.ascontiguousarray(img)))
            masks.append(torch.from_numpy(np.ascontiguousarray(mask))[None])
        yield torch.stack(images).float(), torch.stack(masks).float()
