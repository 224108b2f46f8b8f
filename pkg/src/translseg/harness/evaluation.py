"""Segmentation evaluation over a manifest fold."""

from __future__ import annotations

import torch

from ..data.batches import evaluation_batches
from ..data.manifest import DatasetManifest
from ..model import TranslationModel

DICE_EPS = 1e-7


def dice_coefficient(pred: torch.Tensor, target: torch.Tensor) -> float:
    """Dice overlap of two binary masks (epsilon-smoothed)."""
    pred = pred.float()
    target = target.float()
    inter = float((pred * target).sum())
    denom = float(pred.sum() + target.sum())
    return (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)


@torch.no_grad()
def evaluate(model: TranslationModel, manifest: DatasetManifest, fold: str,
             batch_size: int = 20, threshold: float = 0.5) -> dict:
    """Per-image mean Dice (primary) and pooled-pixel aggregate Dice.

    Predictions are thresholded probability maps; reference masks come from
    the manifest. Raises if the fold has no presence examples.
    """
    per_image: list[float] = []
    inter_total = 0.0
    denom_total = 0.0
    model.eval()
    for images, masks in evaluation_batches(manifest, fold, batch_size):
        pred = model.segment(images, threshold=threshold).float()
        for i in range(pred.shape[0]):
            per_image.append(dice_coefficient(pred[i], masks[i]))
        inter_total += float((pred * masks).sum())
        denom_total += float(pred.sum() + masks.sum())
    model.train()
    return {
        "dice_mean_per_image": sum(per_image) / len(per_image),
        "dice_aggregate": (2.0 * inter_total + DICE_EPS)
                          / (denom_total + DICE_EPS),
        "n": len(per_image),
        "per_image": per_image,
    }
