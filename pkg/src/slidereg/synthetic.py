"""Seeded synthetic slide pairs with exact ground truth.

The moving image is a rendered tissue-like texture; the fixed image is the
moving image pulled back through a known total map m(x) = A(x + u(x)) with A
a random affine and u a smooth random field. Because the fixed image is
defined by backward warping, m is exactly the ground-truth backward field
from fixed to moving: correspondences, the emitted field file, and the
rendered images are mutually consistent by construction.

For gigascale streaming tests, ``procedural_tile`` evaluates a seamless
deterministic texture as a pure function of absolute pixel coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import cv2

from .affine import AffineTransform
from .annotations import LandmarkSet, write_landmarks_csv
from .fields import DisplacementField, write_field
from .pyramid_io import save_array_pyramid


@dataclass(frozen=True)
class AffineRanges:
    """Uniform sampling ranges for the ground-truth backward affine."""

    rotation_deg: tuple[float, float] = (-180.0, 180.0)
    scale: tuple[float, float] = (0.9, 1.1)
    shear: tuple[float, float] = (-0.1, 0.1)
    translation_frac: tuple[float, float] = (-0.1, 0.1)

    @classmethod
    def identity(cls) -> "AffineRanges":
        return cls((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (0.0, 0.0))

    @classmethod
    def gentle(cls) -> "AffineRanges":
        """Small perturbations, for cases focused on the nonrigid stage."""
        return cls((-10.0, 10.0), (0.97, 1.03), (-0.03, 0.03), (-0.02, 0.02))


@dataclass
class SyntheticPair:
    fixed: np.ndarray  # (size, size, 3) uint8
    moving: np.ndarray
    field: DisplacementField  # exact total backward field, per-pixel grid
    affine: AffineTransform  # the affine component of the total map
    landmarks_fixed: LandmarkSet
    landmarks_moving: LandmarkSet


def _tissue_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Blobby pink tissue on white with two scales of intensity texture."""
    coarse = max(size // 4, 64)
    yy, xx = np.mgrid[0:coarse, 0:coarse].astype(np.float32)
    blobs = np.zeros((coarse, coarse), np.float32)
    for _ in range(40):
        cx, cy = rng.uniform(0.2 * coarse, 0.8 * coarse, 2)
        rx, ry = rng.uniform(0.05, 0.16, 2) * coarse
        blobs += np.exp(-(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)).astype(np.float32)
    mask = np.clip((blobs - 0.30) * 3.0, 0.0, 1.0)
    mask = cv2.resize(mask, (size, size), interpolation=cv2.INTER_LINEAR)

    fine = cv2.GaussianBlur(rng.standard_normal((size, size)).astype(np.float32),
                            (0, 0), 1.2)
    fine = (fine - fine.min()) / (fine.max() - fine.min())
    msize = max(size // 8, 32)
    med = cv2.GaussianBlur(rng.standard_normal((msize, msize)).astype(np.float32),
                           (0, 0), 2.0)
    med = cv2.resize(med, (size, size), interpolation=cv2.INTER_LINEAR)
    med = (med - med.min()) / (med.max() - med.min())
    tex = 0.65 * fine + 0.35 * med

    depth = mask * (0.30 + 0.65 * tex)  # 0 = glass, ~0.95 = densest tissue
    rgb = np.empty((size, size, 3), np.float32)
    rgb[:, :, 0] = 255.0 * (1.0 - 0.55 * depth)
    rgb[:, :, 1] = 255.0 * (1.0 - 0.95 * depth)
    rgb[:, :, 2] = 255.0 * (1.0 - 0.70 * depth)
    return np.floor(rgb + 0.5).astype(np.uint8)


def _sample_affine(rng: np.random.Generator, ranges: AffineRanges,
                   size: int) -> AffineTransform:
    theta = rng.uniform(*ranges.rotation_deg)
    s = rng.uniform(*ranges.scale)
    k = rng.uniform(*ranges.shear)
    tx = rng.uniform(*ranges.translation_frac) * size
    ty = rng.uniform(*ranges.translation_frac) * size
    t = np.deg2rad(theta)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    linear = rot @ np.array([[1.0, k], [0.0, 1.0]]) * s
    c = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    translation = c + np.array([tx, ty]) - linear @ c
    return AffineTransform.from_linear(linear, translation)


def _smooth_deformation(rng: np.random.Generator, size: int, max_deform: float,
                        smoothness_sigma: float) -> np.ndarray:
    if max_deform <= 0:
        return np.zeros((size, size, 2), np.float64)
    coarse = max(size // 16, 16)
    u = rng.standard_normal((coarse, coarse, 2)).astype(np.float32)
    u = cv2.GaussianBlur(u, (0, 0), max(smoothness_sigma * coarse / size, 0.5))
    u = cv2.resize(u, (size, size), interpolation=cv2.INTER_LINEAR)
    u = cv2.GaussianBlur(u, (0, 0), min(smoothness_sigma, 40.0))
    u = u.astype(np.float64)
    peak = np.abs(u).max()
    if peak > 0:
        u *= max_deform / peak
    return u


def generate_synthetic_pair(seed: int, size: int, affine_ranges: AffineRanges | None = None,
                            max_deform: float = 0.0, smoothness_sigma: float = 64.0,
                            grid_points: int = 10) -> SyntheticPair:
    """Deterministic pair with exact correspondences.

    The total backward map is evaluated analytically at every pixel; landmark
    positions sit on integer pixels so sampling the emitted field reproduces
    the moving-frame targets exactly (up to float32 file precision).
    """
    if size < 256:
        raise ValueError(f"size must be >= 256, got {size}")
    ranges = affine_ranges or AffineRanges()
    if any(hi < lo for lo, hi in (ranges.rotation_deg, ranges.scale,
                                  ranges.shear, ranges.translation_frac)):
        raise ValueError("degenerate affine ranges (hi < lo)")
    rng = np.random.default_rng(seed)
    moving = _tissue_texture(rng, size)
    affine = _sample_affine(rng, ranges, size)
    u = _smooth_deformation(rng, size, max_deform, smoothness_sigma)

    xs = np.arange(size, dtype=np.float64)
    xx, yy = np.meshgrid(xs, xs)
    mx = (xx + u[:, :, 0]) * affine.matrix[0, 0] + (yy + u[:, :, 1]) * affine.matrix[0, 1] \
        + affine.matrix[0, 2]
    my = (xx + u[:, :, 0]) * affine.matrix[1, 0] + (yy + u[:, :, 1]) * affine.matrix[1, 1] \
        + affine.matrix[1, 2]
    fixed = cv2.remap(moving, mx.astype(np.float32), my.astype(np.float32),
                      cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT,
                      borderValue=(255.0, 255.0, 255.0))

    v = np.stack([mx - xx, my - yy], axis=-1)
    field = DisplacementField(v, size, size)

    margin = int(0.15 * size)
    coords = np.floor(np.linspace(margin, size - 1 - margin, grid_points) + 0.5)
    gx, gy = np.meshgrid(coords, coords)
    pts_fixed = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    ii = pts_fixed[:, 1].astype(np.intp)
    jj = pts_fixed[:, 0].astype(np.intp)
    pts_moving = np.stack([mx[ii, jj], my[ii, jj]], axis=-1)

    return SyntheticPair(
        fixed=fixed, moving=moving, field=field, affine=affine,
        landmarks_fixed=LandmarkSet(pts_fixed, "fixed"),
        landmarks_moving=LandmarkSet(pts_moving, "moving"),
    )


def write_synthetic_case(pair: SyntheticPair, out_dir, tile_size: int = 512) -> dict:
    """Write images, ground-truth field, and landmark files for one case."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "fixed": out / "fixed.tiff",
        "moving": out / "moving.tiff",
        "field": out / "gt_field.dhdf",
        "landmarks_fixed": out / "landmarks_fixed.csv",
        "landmarks_moving": out / "landmarks_moving.csv",
    }
    save_array_pyramid(pair.fixed, paths["fixed"], tile_size=tile_size)
    save_array_pyramid(pair.moving, paths["moving"], tile_size=tile_size)
    write_field(pair.field, paths["field"])
    write_landmarks_csv(pair.landmarks_fixed, paths["landmarks_fixed"])
    write_landmarks_csv(pair.landmarks_moving, paths["landmarks_moving"])
    return {k: str(v) for k, v in paths.items()}


@dataclass(frozen=True)
class TextureParams:
    """Parameters of the seamless procedural texture (pure function of
    absolute coordinates, so tiles never show seams)."""

    freqs: np.ndarray  # (n, 2) cycles per pixel
    phases: np.ndarray  # (n,)
    amps: np.ndarray  # (n,)

    @classmethod
    def from_seed(cls, seed: int, components: int = 12) -> "TextureParams":
        rng = np.random.default_rng(seed)
        freqs = rng.uniform(1 / 900.0, 1 / 12.0, (components, 2))
        freqs *= rng.choice([-1.0, 1.0], (components, 2))
        phases = rng.uniform(0, 2 * np.pi, components)
        amps = rng.uniform(0.4, 1.0, components)
        return cls(freqs, phases, amps)


def procedural_tile(params: TextureParams, x: int, y: int, w: int, h: int) -> np.ndarray:
    """Evaluate the procedural RGB texture on [x, x+w) x [y, y+h)."""
    xs = (x + np.arange(w, dtype=np.float64))[None, :]
    ys = (y + np.arange(h, dtype=np.float64))[:, None]
    acc = np.zeros((h, w), np.float64)
    for (fx, fy), phase, amp in zip(params.freqs, params.phases, params.amps):
        acc += amp * np.sin(2 * np.pi * (fx * xs + fy * ys) + phase)
    norm = (acc / (np.abs(params.amps).sum())) * 0.5 + 0.5
    rgb = np.empty((h, w, 3), np.uint8)
    rgb[:, :, 0] = np.floor(255.0 * (0.55 + 0.45 * norm) + 0.5)
    rgb[:, :, 1] = np.floor(255.0 * (0.25 + 0.60 * norm) + 0.5)
    rgb[:, :, 2] = np.floor(255.0 * (0.40 + 0.55 * norm) + 0.5)
    return rgb
