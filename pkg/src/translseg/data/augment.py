"""On-the-fly data augmentation.

Small random rotations, zooms, intensity scaling, flips, and smooth spline
warping from a coarse control grid. One geometric transform is sampled per
example and applied identically to the image (bilinear) and its mask
(nearest neighbour); pixels pulled from outside the frame are filled by
reflection. Sampling and application are split so parameter distributions
can be audited directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.interpolate import RectBivariateSpline

from .seeds import derived_rng


@dataclass
class AugmentConfig:
    """Magnitudes of each augmentation component; zeros mean identity."""

    max_rotation_deg: float = 3.0
    max_zoom_frac: float = 0.10
    max_intensity_shift_frac: float = 0.10
    hflip: bool = True
    vflip: bool = True
    spline_points: int = 3
    spline_sigma: float = 5.0

    def __post_init__(self) -> None:
        for name in ("max_rotation_deg", "max_zoom_frac",
                     "max_intensity_shift_frac", "spline_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(max_rotation_deg=0.0, max_zoom_frac=0.0,
                   max_intensity_shift_frac=0.0, hflip=False, vflip=False,
                   spline_sigma=0.0)


@dataclass
class AugmentParams:
    """One concrete transform draw."""

    rotation_deg: float
    zoom: float
    intensity_scale: float
    hflip: bool
    vflip: bool
    displacements: np.ndarray  # (2, grid, grid) control-point (dy, dx)

    def is_identity(self) -> bool:
        return (self.rotation_deg == 0.0 and self.zoom == 1.0
                and self.intensity_scale == 1.0 and not self.hflip
                and not self.vflip
                and not np.any(self.displacements))


def sample_augment_params(cfg: AugmentConfig,
                          rng: np.random.Generator) -> AugmentParams:
    rotation = float(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
    zoom = float(rng.uniform(1.0 - cfg.max_zoom_frac, 1.0 + cfg.max_zoom_frac))
    intensity = float(rng.uniform(1.0 - cfg.max_intensity_shift_frac,
                                  1.0 + cfg.max_intensity_shift_frac))
    hflip = bool(cfg.hflip and rng.random() < 0.5)
    vflip = bool(cfg.vflip and rng.random() < 0.5)
    disp = rng.normal(0.0, cfg.spline_sigma,
                      size=(2, cfg.spline_points, cfg.spline_points))
    return AugmentParams(rotation, zoom, intensity, hflip, vflip, disp)


def _dense_displacement(disp: np.ndarray, h: int, w: int) -> np.ndarray:
    """Interpolate control-point displacements to a per-pixel field."""
    grid = disp.shape[1]
    rows = np.linspace(0, h - 1, grid)
    cols = np.linspace(0, w - 1, grid)
    out = np.zeros((2, h, w))
    yy = np.arange(h, dtype=np.float64)
    xx = np.arange(w, dtype=np.float64)
    degree = min(grid - 1, 2)
    for axis in range(2):
        spline = RectBivariateSpline(rows, cols, disp[axis], kx=degree,
                                     ky=degree)
        out[axis] = spline(yy, xx)
    return out


def _source_coordinates(params: AugmentParams, h: int,
                        w: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(params.rotation_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    # Inverse map: rotate by -theta and scale by 1/zoom around the center.
    sy = cy + (cos_t * dy - sin_t * dx) / params.zoom
    sx = cx + (sin_t * dy + cos_t * dx) / params.zoom
    if np.any(params.displacements):
        field = _dense_displacement(params.displacements, h, w)
        sy = sy + field[0]
        sx = sx + field[1]
    return sy, sx


def _warp(channel: np.ndarray, coords, order: int) -> np.ndarray:
    return ndimage.map_coordinates(channel, coords, order=order,
                                   mode="reflect")


def apply_augment(image: np.ndarray, mask: Optional[np.ndarray],
                  params: AugmentParams
                  ) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Apply one sampled transform; accepts (H, W) or (C, H, W) images."""
    if mask is not None and mask.shape[-2:] != image.shape[-2:]:
        raise ValueError("image and mask spatial dims differ")
    if params.is_identity():
        return image.copy(), None if mask is None else mask.copy()

    squeeze = image.ndim == 2
    channels = image[None] if squeeze else image
    if params.hflip:
        channels = channels[:, :, ::-1]
        mask = None if mask is None else mask[:, ::-1]
    if params.vflip:
        channels = channels[:, ::-1, :]
        mask = None if mask is None else mask[::-1, :]

    h, w = channels.shape[1:]
    coords = _source_coordinates(params, h, w)
    warped = np.stack([_warp(np.ascontiguousarray(ch, dtype=np.float64),
                             coords, order=1)
                       for ch in channels])
    warped = warped * params.intensity_scale
    warped = warped.astype(image.dtype, copy=False)
    out_image = warped[0] if squeeze else warped

    out_mask = None
    if mask is not None:
        out_mask = _warp(np.ascontiguousarray(mask, dtype=np.float64),
                         coords, order=0).astype(mask.dtype, copy=False)
    return out_image, out_mask


def augment(image: np.ndarray, mask: Optional[np.ndarray],
            cfg: AugmentConfig, seed: int
            ) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Sample a transform from ``cfg`` with the given seed and apply it."""
    params = sample_augment_params(cfg, derived_rng(seed, "augment"))
    return apply_augment(image, mask, params)
