"""Similarity metrics: global NCC and self-similarity descriptors.

NCC drives the initial alignment; the nonrigid stage matches 4-channel
self-similarity descriptors (per-pixel patch distances to the 4-neighborhood,
exponentiated and max-normalized), which makes cross-stain matching a plain
SSD problem with an analytic gradient.
"""

from __future__ import annotations

import numpy as np
import cv2
from numba import njit

from .fields import DisplacementField

#: Variance floor keeping descriptor ratios finite on flat background.
MIND_EPSILON = 1e-5 * 255.0 ** 2

#: Patch-distance offsets, (dx, dy): up, down, left, right.
MIND_OFFSETS = ((0, -1), (0, 1), (-1, 0), (1, 0))


def ncc_global(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Pearson correlation of two rasters over an optional boolean mask.

    Returns 0.0 when either side has zero variance.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if mask is not None:
        if mask.shape != a.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} does not match {a.shape[:2]}")
        if int(mask.sum()) < 16:
            raise ValueError("mask selects fewer than 16 pixels")
        x = a[mask].astype(np.float64).ravel()
        y = b[mask].astype(np.float64).ravel()
    else:
        x = a.astype(np.float64).ravel()
        y = b.astype(np.float64).ravel()
    xm = x - x.mean()
    ym = y - y.mean()
    vx = float(np.dot(xm, xm))
    vy = float(np.dot(ym, ym))
    if vx == 0.0 or vy == 0.0:
        return 0.0
    c = float(np.dot(xm, ym)) / np.sqrt(vx * vy)
    return min(1.0, max(-1.0, c))


def mind_descriptors(r: np.ndarray) -> np.ndarray:
    """4-channel self-similarity descriptors, float32 in [0, 1].

    Channel i holds exp(-d_i / (v + eps)) where d_i is the 3x3 box-summed
    squared difference to the i-th 4-neighbor, v the mean of the four
    distances; each pixel vector is divided by its max. Borders clamp to
    edge. Invariant (to ~1e-5) under positive affine intensity changes.
    """
    a = np.asarray(r)
    if a.ndim != 2:
        raise ValueError("descriptors need a single-channel raster")
    h, w = a.shape
    if h < 8 or w < 8:
        raise ValueError(f"raster too small for descriptors: {w}x{h} (need >= 8x8)")
    img = a.astype(np.float32)
    padded = np.pad(img, 1, mode="edge")
    d = np.empty((h, w, 4), np.float32)
    for i, (dx, dy) in enumerate(MIND_OFFSETS):
        diff = img - padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        diff *= diff
        d[:, :, i] = cv2.boxFilter(diff, -1, (3, 3), normalize=False,
                                   borderType=cv2.BORDER_REPLICATE)
    v = d.mean(axis=2, keepdims=True)
    desc = np.exp(-d / (v + np.float32(MIND_EPSILON)))
    desc /= desc.max(axis=2, keepdims=True)
    return desc


@njit(cache=True)
def _cost_kernel(df, dm, u, inv_scale):  # pragma: no cover - jitted
    h, w, c = df.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            px = x + u[y, x, 0] * inv_scale
            py = y + u[y, x, 1] * inv_scale
            if px < 0.0:
                px = 0.0
            elif px > w - 1:
                px = float(w - 1)
            if py < 0.0:
                py = 0.0
            elif py > h - 1:
                py = float(h - 1)
            x0 = int(np.floor(px))
            y0 = int(np.floor(py))
            x1 = x0 + 1 if x0 + 1 <= w - 1 else w - 1
            y1 = y0 + 1 if y0 + 1 <= h - 1 else h - 1
            fx = px - x0
            fy = py - y0
            for k in range(c):
                top = dm[y0, x0, k] * (1.0 - fx) + dm[y0, x1, k] * fx
                bot = dm[y1, x0, k] * (1.0 - fx) + dm[y1, x1, k] * fx
                d = top * (1.0 - fy) + bot * fy - df[y, x, k]
                total += d * d
    return total / (h * w)


def mind_data_cost(df: np.ndarray, dm: np.ndarray, field: DisplacementField,
                   scale: float) -> float:
    """Mean per-pixel SSD between fixed descriptors and moving descriptors
    sampled at the displaced positions.

    ``field`` displacements are level-0 pixels; ``scale`` converts them to
    descriptor-grid pixels. Moving descriptors are sampled bilinearly with
    clamp-to-edge; accumulation is sequential float64.
    """
    if df.shape != dm.shape or df.ndim != 3:
        raise ValueError(f"descriptor shape mismatch: {df.shape} vs {dm.shape}")
    h, w = df.shape[:2]
    if (field.grid_width, field.grid_height) != (w, h):
        raise ValueError(f"field grid {field.grid_width}x{field.grid_height} "
                         f"does not match descriptors {w}x{h}")
    return float(_cost_kernel(df, dm, np.ascontiguousarray(field.u), 1.0 / scale))
