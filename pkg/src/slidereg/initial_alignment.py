"""Orientation-free rigid search followed by NCC-descent affine refinement.

No prior on slide orientation is assumed: a full 360-degree rotation sweep
about the tissue centroids picks the rigid seed, then gradient descent on
negative NCC over the six affine parameters refines it. All transforms are
backward maps in preprocessed-pair coordinates until ``run_initial`` rescales
the winner to level-0 coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import cv2

from .affine import AffineTransform
from .preprocessing import PreprocessedPair
from .pyramid_io import resample
from .similarity import ncc_global

#: Long side used for rotation-candidate scoring.
SEARCH_LONG_SIDE = 512

#: Below this best-candidate NCC the slides are considered unmatched.
LOW_CONFIDENCE_NCC = 0.02

_CENTROID_MIN_FOREGROUND = 1e-3
_TRIAL_STEP_PX = 2.0
_TRIAL_STEP_MAX_PX = 64.0
_TRIAL_STEP_MIN_PX = 1e-3
_TRIAL_GROWTH = 2.0
_MAX_HALVINGS = 10
_STALL_RELATIVE = 1e-5
_STALL_ITERS = 10


@dataclass(frozen=True)
class Centroid:
    x: float
    y: float
    fallback: bool


@dataclass
class RotationSearchResult:
    transform: AffineTransform  # preprocessed coordinates
    angle_deg: float
    score: float
    fixed_centroid: Centroid
    moving_centroid: Centroid


@dataclass
class RefineResult:
    transform: AffineTransform  # preprocessed coordinates
    costs: list[float]  # cost after each iteration; index 0 is the initial cost


@dataclass
class InitialAlignmentResult:
    transform: AffineTransform  # level-0 coordinates
    angle_deg: float
    search_score: float
    low_confidence: bool
    refine_costs: list[float]


def estimate_tissue_centroid(r: np.ndarray) -> Centroid:
    """Centroid of Otsu-foreground pixels of a tissue-bright raster.

    Falls back to the image center when less than 0.1% of pixels are
    foreground.
    """
    if r.ndim != 2 or r.dtype != np.uint8:
        raise ValueError("centroid estimation expects a 2-D uint8 raster")
    thr, _ = cv2.threshold(r, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    fg = r > thr
    count = int(fg.sum())
    h, w = r.shape
    if count < _CENTROID_MIN_FOREGROUND * r.size:
        return Centroid((w - 1) / 2.0, (h - 1) / 2.0, True)
    ys, xs = np.nonzero(fg)
    return Centroid(float(xs.mean()), float(ys.mean()), False)


def _warp_backward_f32(img: np.ndarray, t: AffineTransform, nearest: bool = False) -> np.ndarray:
    flags = (cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR) | cv2.WARP_INVERSE_MAP
    h, w = img.shape[:2]
    return cv2.warpAffine(img, t.as_cv(), (w, h), flags=flags,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)


def _shrink_to(raster: np.ndarray, long_side: int) -> tuple[np.ndarray, float]:
    factor = min(1.0, long_side / max(raster.shape[:2]))
    return (raster if factor == 1.0 else resample(raster, factor)), factor


def exhaustive_rotation_search(pair: PreprocessedPair,
                               angle_step_deg: float = 15.0) -> RotationSearchResult:
    """Score every rotation candidate on a centroid-aligned grid of angles.

    For each angle the candidate backward map rotates about the moving
    centroid and moves it onto the fixed centroid; candidates are scored by
    NCC over the overlap mask at long side 512. Ties keep the smaller angle.
    """
    if not 0 < angle_step_deg <= 90:
        raise ValueError(f"angle_step_deg must be in (0, 90], got {angle_step_deg}")
    fixed_w, factor = _shrink_to(pair.fixed, SEARCH_LONG_SIDE)
    moving_w, _ = _shrink_to(pair.moving, SEARCH_LONG_SIDE)
    cf = estimate_tissue_centroid(fixed_w)
    cm = estimate_tissue_centroid(moving_w)
    fixed_f = fixed_w.astype(np.float32)
    moving_f = moving_w.astype(np.float32)
    coverage = np.full(moving_w.shape, 255, np.uint8)

    best_angle = 0.0
    best_score = -np.inf
    best_t: AffineTransform | None = None
    for angle in np.arange(0.0, 360.0, angle_step_deg):
        # backward map: rotate moving by `angle` about its centroid, then
        # translate the moving centroid onto the fixed centroid
        t = (AffineTransform.translation_by(cm.x, cm.y)
             .compose(AffineTransform.rotation_deg(-angle))
             .compose(AffineTransform.translation_by(-cf.x, -cf.y)))
        warped = _warp_backward_f32(moving_f, t)
        mask = _warp_backward_f32(coverage, t, nearest=True) > 0
        score = ncc_global(fixed_f, warped, mask) if int(mask.sum()) >= 16 else -1.0
        if score > best_score:
            best_score = score
            best_angle = float(angle)
            best_t = t

    lift = 1.0 / factor
    return RotationSearchResult(
        transform=best_t.with_translation_scaled(lift),
        angle_deg=best_angle,
        score=float(best_score),
        fixed_centroid=Centroid(cf.x * lift, cf.y * lift, cf.fallback),
        moving_centroid=Centroid(cm.x * lift, cm.y * lift, cm.fallback),
    )


class _NccCost:
    """-NCC against a fixed raster with precomputed fixed-side statistics."""

    def __init__(self, fixed: np.ndarray, moving: np.ndarray):
        self.moving = moving
        a = fixed.astype(np.float64).ravel()
        self.a_centered = a - a.mean()
        self.a_var = float(np.dot(self.a_centered, self.a_centered))
        self.n = a.size

    def __call__(self, t: AffineTransform) -> float:
        warped = _warp_backward_f32(self.moving, t)
        b = warped.astype(np.float64).ravel()
        sb = float(b.sum())
        sbb = float(np.dot(b, b))
        sab = float(np.dot(self.a_centered, b))
        var_b = sbb - sb * sb / self.n
        if self.a_var <= 0.0 or var_b <= 0.0:
            return 0.0
        c = sab / np.sqrt(self.a_var * var_b)
        return -min(1.0, max(-1.0, c))


def refine_affine(pair: PreprocessedPair, init: AffineTransform,
                  max_iters: int = 100, working_long_side: int = 1024) -> RefineResult:
    """Descend -NCC over the six affine parameters.

    Central finite differences (1e-3 on linear entries, 0.5 px on
    translation), a diagonally preconditioned step with backtracking halving
    (at most 10) so the cost never increases, stopping after ``max_iters`` or
    10 consecutive iterations with relative improvement below 1e-5.
    """
    fixed_w, factor = _shrink_to(pair.fixed, working_long_side)
    moving_w, _ = _shrink_to(pair.moving, working_long_side)
    cost_fn = _NccCost(fixed_w, moving_w.astype(np.float32))
    h, w = fixed_w.shape
    center = np.array([w / 2.0, h / 2.0])
    radius = 0.5 * float(np.hypot(w, h))

    init_w = init.with_translation_scaled(factor)
    # parameterize about the image center: x_m = L (x_f - c) + c + t
    p = np.empty(6)
    p[:4] = init_w.linear.ravel()
    p[4:] = init_w.translation - center + init_w.linear @ center

    def build(q: np.ndarray) -> AffineTransform:
        linear = q[:4].reshape(2, 2)
        return AffineTransform.from_linear(linear, center + q[4:] - linear @ center)

    def cost(q: np.ndarray) -> float:
        return cost_fn(build(q))

    deltas = np.array([1e-3] * 4 + [0.5] * 2)
    precond = np.array([1.0 / radius ** 2] * 4 + [1.0] * 2)
    current = cost(p)
    costs = [current]
    stall = 0
    trial_px = _TRIAL_STEP_PX  # adapts: grows on clean accepts, shrinks on halving
    for _ in range(max_iters):
        grad = np.empty(6)
        for i in range(6):
            probe = p.copy()
            probe[i] = p[i] + deltas[i]
            hi = cost(probe)
            probe[i] = p[i] - deltas[i]
            lo = cost(probe)
            grad[i] = (hi - lo) / (2 * deltas[i])
        direction = -grad * precond
        reach = float(np.linalg.norm(direction[:4]) * radius + np.linalg.norm(direction[4:]))
        previous = current
        if reach > 0:
            eta = trial_px / reach
            for halvings in range(_MAX_HALVINGS + 1):
                candidate = p + eta * direction
                c = cost(candidate)
                if c <= current:
                    p, current = candidate, c
                    if halvings == 0:
                        trial_px = min(trial_px * _TRIAL_GROWTH, _TRIAL_STEP_MAX_PX)
                    else:
                        trial_px = max(trial_px * 0.5 ** halvings, _TRIAL_STEP_MIN_PX)
                    break
                eta *= 0.5
            else:
                trial_px = max(trial_px * 0.5 ** _MAX_HALVINGS, _TRIAL_STEP_MIN_PX)
        costs.append(current)
        improvement = (previous - current) / max(abs(previous), 1e-12)
        stall = stall + 1 if improvement < _STALL_RELATIVE else 0
        if stall >= _STALL_ITERS:
            break
    return RefineResult(build(p).with_translation_scaled(1.0 / factor), costs)


def run_initial(pair: PreprocessedPair, *, angle_step_deg: float = 15.0,
                refine_max_iters: int = 100, working_long_side: int = 1024,
                ) -> InitialAlignmentResult:
    """Rotation search, then affine refinement, rescaled to level-0 coords.

    If the best rotation-search NCC falls below 0.02 the slides are treated
    as unmatched: the result is the centroid-aligning translation only,
    flagged low confidence.
    """
    search = exhaustive_rotation_search(pair, angle_step_deg)
    if search.score < LOW_CONFIDENCE_NCC:
        t_pre = AffineTransform.translation_by(
            search.moving_centroid.x - search.fixed_centroid.x,
            search.moving_centroid.y - search.fixed_centroid.y)
        return InitialAlignmentResult(
            transform=t_pre.with_translation_scaled(pair.scale),
            angle_deg=search.angle_deg, search_score=search.score,
            low_confidence=True, refine_costs=[])
    refined = refine_affine(pair, search.transform, refine_max_iters, working_long_side)
    return InitialAlignmentResult(
        transform=refined.transform.with_translation_scaled(pair.scale),
        angle_deg=search.angle_deg, search_score=search.score,
        low_confidence=False, refine_costs=refined.costs)
