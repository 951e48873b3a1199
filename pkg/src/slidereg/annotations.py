"""Transfer landmarks, polygon point lists, and label masks; score quality.

Landmark files are minimal CSV: header exactly ``x,y``, one point per line,
level-0 pixel coordinates (x right, y down). When any transferred point
failed to converge a third ``converged`` column (0/1) is appended. Polygon
"shapes" are ordered point lists and go through ``transform_points``
unchanged in order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .fields import DisplacementField, sample_displacement
from .pyramid_io import PyramidImage
from .warping import WarpPlan, WarpStats, warp_image_tiled

FIXED_TO_MOVING = "fixed_to_moving"
MOVING_TO_FIXED = "moving_to_fixed"

_INVERT_TOL = 0.05
_INVERT_MAX_ITERS = 50


@dataclass
class LandmarkSet:
    """Ordered 2-D points in level-0 pixel coordinates of one image."""

    points: np.ndarray  # (n, 2) float64
    frame: str  # "fixed" | "moving"
    converged: np.ndarray | None = None  # per-point flags from inversion

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        if self.frame not in ("fixed", "moving"):
            raise ValueError(f"frame must be 'fixed' or 'moving', got {self.frame!r}")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)


def transform_points(pts: LandmarkSet, field: DisplacementField,
                     direction: str) -> LandmarkSet:
    """Map landmarks through the total field.

    fixed_to_moving evaluates p + v(p) directly; moving_to_fixed solves
    p = x + v(x) per point by fixed-point iteration (tol 0.05 px, 50 iters),
    flagging non-converged points instead of dropping them. Order is
    preserved.
    """
    if direction == FIXED_TO_MOVING:
        if pts.frame != "fixed":
            raise ValueError("fixed_to_moving needs points in the fixed frame")
        dx, dy = sample_displacement(field, pts.points[:, 0], pts.points[:, 1])
        out = pts.points + np.stack([dx, dy], axis=-1)
        return LandmarkSet(out, "moving")
    if direction == MOVING_TO_FIXED:
        if pts.frame != "moving":
            raise ValueError("moving_to_fixed needs points in the moving frame")
        target = pts.points
        cur = target.copy()
        delta = np.full(len(target), np.inf)
        for _ in range(_INVERT_MAX_ITERS):
            dx, dy = sample_displacement(field, cur[:, 0], cur[:, 1])
            nxt = target - np.stack([dx, dy], axis=-1)
            delta = np.hypot(nxt[:, 0] - cur[:, 0], nxt[:, 1] - cur[:, 1])
            cur = nxt
            if delta.max() < _INVERT_TOL:
                break
        return LandmarkSet(cur, "fixed", converged=delta < _INVERT_TOL)
    raise ValueError(f"unknown direction {direction!r}")


def warp_mask(mask: PyramidImage, field: DisplacementField, path, *,
              output_width: int, output_height: int, tile_size: int = 512,
              num_levels: int | None = None) -> WarpStats:
    """Warp a label mask onto the fixed domain: nearest neighbor, fill 0.

    The output value set is a subset of the input values plus 0.
    """
    if mask.channels != 1:
        raise ValueError("masks must be single-channel")
    plan = WarpPlan(field, mask, output_width, output_height,
                    tile_size=tile_size, interpolation="nearest", fill=0)
    return warp_image_tiled(plan, path, num_levels=num_levels)


@dataclass
class RtreResult:
    per_point: np.ndarray
    median: float
    mean: float
    max: float


def compute_rtre(warped: LandmarkSet, target: LandmarkSet, diag: float) -> RtreResult:
    """Relative target registration error: point distance / image diagonal."""
    if len(warped) != len(target):
        raise ValueError(f"point count mismatch: {len(warped)} vs {len(target)}")
    if diag <= 0:
        raise ValueError("diagonal must be positive")
    d = np.linalg.norm(warped.points - target.points, axis=1) / diag
    return RtreResult(per_point=d, median=float(np.median(d)),
                      mean=float(d.mean()), max=float(d.max()))


def read_landmarks_csv(path, frame: str) -> LandmarkSet:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["x", "y"]:
        raise FormatError(f"{path}: landmark CSV must start with header 'x,y'")
    has_flags = len(rows[0]) == 3 and rows[0][2] == "converged"
    if len(rows[0]) > 2 and not has_flags:
        raise FormatError(f"{path}: unexpected columns {rows[0][2:]}")
    pts, flags = [], []
    for i, row in enumerate(rows[1:], start=2):
        try:
            pts.append((float(row[0]), float(row[1])))
            if has_flags:
                flags.append(bool(int(row[2])))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: bad landmark row {i}: {row}") from exc
    return LandmarkSet(np.array(pts, np.float64).reshape(-1, 2), frame,
                       converged=np.array(flags, bool) if has_flags else None)


def write_landmarks_csv(pts: LandmarkSet, path) -> None:
    """Write points; adds the converged column when any point failed."""
    add_flags = pts.converged is not None and not bool(np.all(pts.converged))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "converged"] if add_flags else ["x", "y"])
        for i, (x, y) in enumerate(pts.points):
            row = [repr(float(x)), repr(float(y))]
            if add_flags:
                row.append(str(int(pts.converged[i])))
            writer.writerow(row)
