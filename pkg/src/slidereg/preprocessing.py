"""Turn a slide pair into padded single-channel rasters at registration scale.

Both images are read at a suitable pyramid level, resampled with one shared
scale factor (preserving relative physical size), converted to grayscale,
percentile-stretched and inverted so tissue is bright on a near-zero
background, then zero-padded to a common shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pyramid_io import (
    PyramidImage,
    pad_to_common,
    raster_channels,
    read_region,
    resample,
)

DEFAULT_LOW_PERCENTILE = 1.0
DEFAULT_HIGH_PERCENTILE = 99.0


@dataclass
class PreprocessedPair:
    """Same-shape normalized rasters plus the level-0-per-pixel scale."""

    fixed: np.ndarray
    moving: np.ndarray
    scale: float
    fixed_flat: bool = False
    moving_flat: bool = False

    @property
    def long_side(self) -> int:
        return max(self.fixed.shape[:2])


def to_grayscale(r: np.ndarray) -> np.ndarray:
    """Rec. 601 luma: round(0.299 R + 0.587 G + 0.114 B); gray passes through."""
    if raster_channels(r) == 1:
        return r if r.ndim == 2 else r[:, :, 0]
    rgb = r.astype(np.uint32)
    g = (299 * rgb[:, :, 0] + 587 * rgb[:, :, 1] + 114 * rgb[:, :, 2] + 500) // 1000
    return g.astype(np.uint8)


def normalize_intensity(r: np.ndarray, low_percentile: float = DEFAULT_LOW_PERCENTILE,
                        high_percentile: float = DEFAULT_HIGH_PERCENTILE,
                        ) -> tuple[np.ndarray, bool]:
    """Percentile-stretch to [0, 255], then invert so tissue is bright.

    Returns ``(raster, degenerate)``; a constant input yields an all-zero
    raster with the degenerate flag set instead of an error.
    """
    if raster_channels(r) != 1:
        raise ValueError("normalize_intensity needs a single-channel raster")
    lo, hi = np.percentile(r, [low_percentile, high_percentile])
    if hi <= lo:
        return np.zeros_like(r), True
    v = (r.astype(np.float64) - lo) * (255.0 / (hi - lo))
    stretched = np.floor(np.clip(v, 0.0, 255.0) + 0.5).astype(np.uint8)
    return 255 - stretched, False


def _pick_level(img: PyramidImage, target_long_side: int) -> int:
    """Smallest level whose long side still covers the target (level 0 if none)."""
    best = 0
    for k, level in enumerate(img.levels):
        if max(level.width, level.height) >= target_long_side:
            best = k
        else:
            break
    return best


def preprocess_pair(fixed: PyramidImage, moving: PyramidImage, target_long_side: int,
                    *, low_percentile: float = DEFAULT_LOW_PERCENTILE,
                    high_percentile: float = DEFAULT_HIGH_PERCENTILE,
                    read_fill: int = 255) -> PreprocessedPair:
    """Produce the registration-resolution pair; the larger image's long side
    becomes ``target_long_side`` and the same scale applies to both images."""
    if target_long_side < 64:
        raise ValueError(f"target_long_side must be >= 64, got {target_long_side}")
    long0 = max(fixed.level0_width, fixed.level0_height,
                moving.level0_width, moving.level0_height)
    scale = long0 / target_long_side  # level-0 px per preprocessed px

    def prep_one(img: PyramidImage) -> tuple[np.ndarray, bool]:
        k = _pick_level(img, target_long_side)
        level = img.levels[k]
        raster = read_region(img, k, 0, 0, level.width, level.height, fill=read_fill)
        img_long0 = max(img.level0_width, img.level0_height)
        out_long = img_long0 / scale
        factor = out_long / max(level.width, level.height)
        raster = resample(raster, factor) if factor != 1.0 else raster
        gray = to_grayscale(raster)
        return normalize_intensity(gray, low_percentile, high_percentile)

    f, f_flat = prep_one(fixed)
    m, m_flat = prep_one(moving)
    f, m = pad_to_common(f, m, fill=0)
    return PreprocessedPair(fixed=f, moving=m, scale=scale,
                            fixed_flat=f_flat, moving_flat=m_flat)
