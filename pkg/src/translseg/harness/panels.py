"""Diagnostic image panels.

Renders a PNG grid of the translation pipeline: for presence samples the
rows are input, translation, signed residual, and segmentation; for absence
samples they are input, reconstruction, translation-to-presence, and the
cycle image. Rendering is pure array math plus a metadata-free PNG write,
so identical models and samples give byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..model import TranslationModel

_CELL_PAD = 2


def _to_display(img: torch.Tensor, mode: str, channel: int) -> np.ndarray:
    """Map one (C, H, W) tensor to a uint8 (H, W) cell."""
    arr = img[channel].detach().numpy().astype(np.float64)
    if mode == "image":           # [-1, 1] intensity space, clipped
        arr = (arr + 1.0) / 2.0
    elif mode == "residual":      # symmetric around 0 -> mid-gray
        peak = max(float(np.abs(arr).max()), 1e-8)
        arr = arr / (2.0 * peak) + 0.5
    elif mode == "probability":   # already in [0, 1]
        pass
    else:
        raise ValueError(f"unknown display mode {mode!r}")
    return (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def _grid(rows: list[list[np.ndarray]]) -> np.ndarray:
    h, w = rows[0][0].shape
    n_rows, n_cols = len(rows), len(rows[0])
    canvas = np.full((n_rows * (h + _CELL_PAD) - _CELL_PAD,
                      n_cols * (w + _CELL_PAD) - _CELL_PAD), 255, np.uint8)
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            top, left = r * (h + _CELL_PAD), c * (w + _CELL_PAD)
            canvas[top:top + h, left:left + w] = cell
    return canvas


@torch.no_grad()
def emit_panels(model: TranslationModel, batch: torch.Tensor,
                out_path: str | Path, domain: str = "P",
                noise_seed: int = 0, channel: int = 0,
                cycle_enabled: bool = True) -> Path:
    """Write one 4-row panel PNG for a sample batch; returns the path."""
    if model.variant != "proposed":
        raise ValueError("panels require the proposed variant")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    model.eval()
    if domain == "P":
        b = model.forward_presence(batch)
        specs = [(b.x_p, "image"), (b.x_pa, "image"),
                 (b.delta_pa, "residual"), (b.y_seg, "probability")]
    elif domain == "A":
        gen = torch.Generator().manual_seed(noise_seed)
        b = model.forward_absence(batch, gen, cycle_enabled=cycle_enabled)
        x_apa = b.x_apa if b.x_apa is not None else torch.zeros_like(b.x_a)
        specs = [(b.x_a, "image"), (b.x_aa, "image"), (b.x_ap, "image"),
                 (x_apa, "image")]
    else:
        raise ValueError(f"unknown panel domain {domain!r}")
    model.train()
    rows = [[_to_display(tensor[i], mode, channel)
             for i in range(tensor.shape[0])]
            for tensor, mode in specs]
    image = Image.fromarray(_grid(rows), mode="L")
    image.save(out_path, format="PNG")
    return out_path
