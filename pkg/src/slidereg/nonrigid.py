"""Multi-resolution dense displacement field optimization.

Demons-style updates on self-similarity descriptors: the per-pixel force is
the descriptor residual times the sampled descriptor gradient, the updated
field is Gaussian-smoothed (diffusion-like regularization), and a step-halving
acceptance test keeps the data cost non-increasing at every iteration. Levels
run coarse to fine with the field upsampled in between; displacements stay in
level-0 pixel units throughout, so upsampling preserves values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import cv2
from numba import njit

from .affine import AffineTransform
from .fields import DisplacementField, upsample_field
from .preprocessing import PreprocessedPair
from .similarity import mind_data_cost, mind_descriptors

_MAX_HALVINGS = 10


@dataclass(frozen=True)
class ScheduleLevel:
    downsample: int
    iterations: int
    step: float
    sigma: float


@dataclass(frozen=True)
class LevelSchedule:
    """Coarse-to-fine schedule; downsample factors strictly decrease to 1."""

    levels: tuple[ScheduleLevel, ...]

    def __post_init__(self) -> None:
        if not self.levels:
            raise ValueError("schedule needs at least one level")
        factors = [lv.downsample for lv in self.levels]
        if any(f < 1 for f in factors) or factors[-1] != 1:
            raise ValueError(f"downsample factors must end at 1, got {factors}")
        if any(nxt >= cur for cur, nxt in zip(factors, factors[1:])):
            raise ValueError(f"downsample factors must strictly decrease, got {factors}")
        if any(lv.iterations < 0 for lv in self.levels):
            raise ValueError("iteration counts must be >= 0")
        if any(lv.step <= 0 or lv.sigma < 0 for lv in self.levels):
            raise ValueError("step must be positive and sigma non-negative")

    @classmethod
    def default(cls, num_levels: int = 3, iterations: tuple[int, ...] = (100, 100, 50),
                step: float = 0.5, sigma: float = 2.0) -> "LevelSchedule":
        if len(iterations) != num_levels:
            raise ValueError(f"need {num_levels} iteration counts, got {len(iterations)}")
        factors = [1 << (num_levels - 1 - i) for i in range(num_levels)]
        return cls(tuple(ScheduleLevel(f, it, step, sigma)
                         for f, it in zip(factors, iterations)))


@dataclass(frozen=True)
class TraceEntry:
    level: int
    iteration: int  # 0 is the cost before any update at that level
    cost: float


def _gaussian_smooth(u: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return u
    k = 2 * int(np.ceil(3.0 * sigma)) + 1
    return cv2.GaussianBlur(u, (k, k), sigma, borderType=cv2.BORDER_REPLICATE)


def _descriptor_gradients(dm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(dm, axis=(0, 1))
    return gx, gy


@njit(cache=True)
def _force_kernel(df, dm, gx, gy, u, inv_scale, out):  # pragma: no cover - jitted
    h, w, c = df.shape
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
            w00 = (1.0 - fx) * (1.0 - fy)
            w01 = fx * (1.0 - fy)
            w10 = (1.0 - fx) * fy
            w11 = fx * fy
            ax = 0.0
            ay = 0.0
            for k in range(c):
                v = (w00 * dm[y0, x0, k] + w01 * dm[y0, x1, k]
                     + w10 * dm[y1, x0, k] + w11 * dm[y1, x1, k])
                r = v - df[y, x, k]
                ax += r * (w00 * gx[y0, x0, k] + w01 * gx[y0, x1, k]
                           + w10 * gx[y1, x0, k] + w11 * gx[y1, x1, k])
                ay += r * (w00 * gy[y0, x0, k] + w01 * gy[y0, x1, k]
                           + w10 * gy[y1, x0, k] + w11 * gy[y1, x1, k])
            out[y, x, 0] = ax
            out[y, x, 1] = ay


def demons_iteration(df: np.ndarray, dm: np.ndarray, f: DisplacementField,
                     step: float, sigma: float, *, cost_in: float | None = None,
                     grads: tuple[np.ndarray, np.ndarray] | None = None,
                     ) -> tuple[DisplacementField, float]:
    """One force-smooth-accept update of the field.

    The per-pixel force is the descriptor residual dotted with the moving
    descriptor gradient, both sampled at the displaced position. The
    candidate ``smooth(u - step * force * scale, sigma)`` is accepted only if
    it does not increase the descriptor data cost; otherwise the step is
    halved (at most 10 times). If no halving succeeds the input field is
    returned unchanged together with its cost.
    """
    if df.shape != dm.shape or df.ndim != 3:
        raise ValueError(f"descriptor shape mismatch: {df.shape} vs {dm.shape}")
    h, w = df.shape[:2]
    if (f.grid_width, f.grid_height) != (w, h):
        raise ValueError(f"field grid {f.grid_width}x{f.grid_height} does not "
                         f"match descriptors {w}x{h}")
    s = f.scale
    cost0 = mind_data_cost(df, dm, f, s) if cost_in is None else cost_in

    if grads is None:
        grads = _descriptor_gradients(dm)
    gx, gy = grads
    u = np.ascontiguousarray(f.u)
    force = np.empty((h, w, 2), np.float32)
    _force_kernel(df, dm, gx, gy, u, 1.0 / s, force)

    trial = step
    for _ in range(_MAX_HALVINGS + 1):
        cand = u - (u.dtype.type(trial * s)) * force
        cand = _gaussian_smooth(cand, sigma)
        candidate = DisplacementField(cand, f.level0_width, f.level0_height,
                                      validate=False)
        cost = mind_data_cost(df, dm, candidate, s)
        if cost <= cost0:
            return candidate, cost
        trial *= 0.5
    return f, cost0


def run_nonrigid(pair: PreprocessedPair, affine_level0: AffineTransform,
                 schedule: LevelSchedule, registration_long_side: int | None = None,
                 ) -> tuple[DisplacementField, list[TraceEntry]]:
    """Optimize a dense field between the fixed raster and the affine-prewarped
    moving raster, coarse to fine.

    The returned field lives on the fixed level-0 domain at the finest
    schedule grid, with displacements relative to the affine-prewarped moving
    image; composing it with the affine happens in the warping stage.
    """
    fixed = pair.fixed.astype(np.float32)
    moving = pair.moving.astype(np.float32)
    scale_reg = pair.scale
    if registration_long_side is not None and registration_long_side != pair.long_side:
        factor = registration_long_side / pair.long_side
        h, w = fixed.shape
        size = (int(np.floor(w * factor + 0.5)), int(np.floor(h * factor + 0.5)))
        interp = cv2.INTER_AREA if factor < 1 else cv2.INTER_LINEAR
        fixed = cv2.resize(fixed, size, interpolation=interp)
        moving = cv2.resize(moving, size, interpolation=interp)
        scale_reg = pair.scale * pair.long_side / registration_long_side

    h, w = fixed.shape
    a_reg = affine_level0.with_translation_scaled(1.0 / scale_reg)
    prewarped = cv2.warpAffine(moving, a_reg.as_cv(), (w, h),
                               flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                               borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)

    # pad to a multiple of the coarsest factor so every level divides evenly
    # and the field keeps a uniform grid scale on both axes
    mult = schedule.levels[0].downsample
    wp = -(-w // mult) * mult
    hp = -(-h // mult) * mult
    if (wp, hp) != (w, h):
        fixed = np.pad(fixed, ((0, hp - h), (0, wp - w)))
        prewarped = np.pad(prewarped, ((0, hp - h), (0, wp - w)))
    level0_w = int(np.floor(wp * scale_reg + 0.5))
    level0_h = int(np.floor(hp * scale_reg + 0.5))

    field: DisplacementField | None = None
    trace: list[TraceEntry] = []
    for li, lv in enumerate(schedule.levels):
        lw, lh = wp // lv.downsample, hp // lv.downsample
        if lv.downsample == 1:
            fx_l, mv_l = fixed, prewarped
        else:
            fx_l = cv2.resize(fixed, (lw, lh), interpolation=cv2.INTER_AREA)
            mv_l = cv2.resize(prewarped, (lw, lh), interpolation=cv2.INTER_AREA)
        df = mind_descriptors(fx_l)
        dm = mind_descriptors(mv_l)
        grads = _descriptor_gradients(dm)
        if field is None:
            # float32 carrier: ample for displacement magnitudes, halves the
            # per-candidate arithmetic at the finest level
            field = DisplacementField(np.zeros((lh, lw, 2), np.float32),
                                      level0_w, level0_h)
        else:
            field = upsample_field(field, lw, lh)
        cost = mind_data_cost(df, dm, field, field.scale)
        trace.append(TraceEntry(li, 0, cost))
        for it in range(lv.iterations):
            updated, new_cost = demons_iteration(df, dm, field, lv.step, lv.sigma,
                                                 cost_in=cost, grads=grads)
            if updated is field:
                break  # rejected; identical inputs would keep rejecting
            field, cost = updated, new_cost
            trace.append(TraceEntry(li, it + 1, cost))
    return field, trace
