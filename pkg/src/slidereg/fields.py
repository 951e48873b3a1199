"""Dense displacement fields: sampling, composition, inversion, file IO.

A field is a coarse grid of (dx, dy) displacements in level-0 pixel units,
acting as a backward map on the fixed image domain: the source coordinate
for a fixed-domain point x is x + u(x). Grid node (i, j) sits at level-0
coordinate (j * s, i * s) with s = level0_width / grid_width, and sampling
between nodes is bilinear with clamp-to-edge.

The on-disk format is a little-endian header
``"DHDF", version u32, level0_width u64, level0_height u64, grid_width u32,
grid_height u32`` followed by row-major interleaved (dx, dy) float32 pairs.
"""

from __future__ import annotations

import struct
from dataclasses import InitVar, dataclass
from pathlib import Path

import numpy as np

from .affine import AffineTransform
from .errors import FormatError, NumericalError

FIELD_MAGIC = b"DHDF"
FIELD_VERSION = 1
_HEADER = struct.Struct("<4sIQQII")

#: Maximum relative disagreement allowed between the two axes' grid scales.
SCALE_TOLERANCE = 1e-3


@dataclass
class DisplacementField:
    """Backward displacement grid over a level-0 domain.

    ``u`` has shape (grid_height, grid_width, 2) with (dx, dy) in level-0
    pixels; float32 or float64 is preserved (anything else is promoted to
    float64). Files always carry float32.
    """

    u: np.ndarray
    level0_width: int
    level0_height: int
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool) -> None:
        u = np.asarray(self.u)
        if u.dtype not in (np.float32, np.float64):
            u = u.astype(np.float64)
        if u.ndim != 3 or u.shape[2] != 2:
            raise ValueError(f"field array must be (gh, gw, 2), got {u.shape}")
        self.u = u
        if not validate:
            return
        gh, gw = u.shape[:2]
        if gw < 2 or gh < 2:
            raise ValueError(f"field grid must be at least 2x2, got {gw}x{gh}")
        if self.level0_width < gw or self.level0_height < gh:
            raise ValueError("level-0 domain smaller than the grid")
        sx = self.level0_width / gw
        sy = self.level0_height / gh
        if abs(sx - sy) > SCALE_TOLERANCE * sx:
            raise ValueError(f"non-uniform grid scale: {sx:.6g} (x) vs {sy:.6g} (y)")
        if not np.all(np.isfinite(u)):
            raise NumericalError("displacement field has non-finite components")

    @property
    def grid_width(self) -> int:
        return self.u.shape[1]

    @property
    def grid_height(self) -> int:
        return self.u.shape[0]

    @property
    def scale(self) -> float:
        """Level-0 pixels per grid cell."""
        return self.level0_width / self.grid_width

    def copy(self) -> "DisplacementField":
        return DisplacementField(self.u.copy(), self.level0_width,
                                 self.level0_height, validate=False)


def zero_field(grid_width: int, grid_height: int, level0_width: int,
               level0_height: int) -> DisplacementField:
    return DisplacementField(np.zeros((grid_height, grid_width, 2)),
                             level0_width, level0_height)


def _sample_grid(u: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Bilinear clamp-to-edge sampling of the grid at grid coordinates."""
    gh, gw = u.shape[:2]
    x = np.clip(gx, 0.0, float(gw - 1))
    y = np.clip(gy, 0.0, float(gh - 1))
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, gw - 1)
    y1 = np.minimum(y0 + 1, gh - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = u[y0, x0] * (1.0 - fx) + u[y0, x1] * fx
    bot = u[y1, x0] * (1.0 - fx) + u[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_displacement(f: DisplacementField, x, y) -> tuple:
    """Displacement (dx, dy) at level-0 coordinates; accepts scalars or arrays.

    Points outside the domain clamp to the grid edge.
    """
    s = f.scale
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    d = _sample_grid(f.u, xs / s, ys / s)
    if xs.ndim == 0:
        return float(d[0]), float(d[1])
    return d[..., 0], d[..., 1]


def upsample_field(f: DisplacementField, new_grid_width: int,
                   new_grid_height: int) -> DisplacementField:
    """Bilinearly resample the grid; displacement values are level-0 units
    and therefore unchanged. The carrier dtype is preserved."""
    if new_grid_width < f.grid_width or new_grid_height < f.grid_height:
        raise ValueError("upsample_field cannot shrink the grid")
    if (new_grid_width, new_grid_height) == (f.grid_width, f.grid_height):
        return f.copy()
    # new node j' sits at old grid coordinate j' * gw_old / gw_new
    gx = np.arange(new_grid_width, dtype=np.float64) * (f.grid_width / new_grid_width)
    gy = np.arange(new_grid_height, dtype=np.float64) * (f.grid_height / new_grid_height)
    xx, yy = np.meshgrid(gx, gy)
    u = _sample_grid(f.u, xx, yy).astype(f.u.dtype)
    return DisplacementField(u, f.level0_width, f.level0_height)


def compose_affine_with_field(a: AffineTransform, f: DisplacementField) -> DisplacementField:
    """Total backward map m(x) = A (x + u(x)), returned as a field v = m - id
    on the same grid."""
    if abs(np.linalg.det(a.linear)) <= 1e-8:
        raise NumericalError("cannot compose with a singular affine")
    s = f.scale
    xs = np.arange(f.grid_width, dtype=np.float64) * s
    ys = np.arange(f.grid_height, dtype=np.float64) * s
    xx, yy = np.meshgrid(xs, ys)
    pts = np.stack([xx + f.u[:, :, 0], yy + f.u[:, :, 1]], axis=-1)
    mapped = a.apply(pts)
    mapped[:, :, 0] -= xx
    mapped[:, :, 1] -= yy
    return DisplacementField(mapped, f.level0_width, f.level0_height)


def invert_field(f: DisplacementField, tol: float = 0.05,
                 max_iters: int = 50) -> tuple[DisplacementField, int]:
    """Approximate inverse by per-node fixed-point iteration.

    Solves p = x + u(x) for x at every grid node p, storing v(p) = x - p.
    Returns the inverse field and the count of nodes that did not reach
    ``tol`` within ``max_iters`` iterations.
    """
    s = f.scale
    xs = np.arange(f.grid_width, dtype=np.float64) * s
    ys = np.arange(f.grid_height, dtype=np.float64) * s
    px, py = np.meshgrid(xs, ys)
    cx, cy = px.copy(), py.copy()
    delta = np.full(px.shape, np.inf)
    for _ in range(max_iters):
        d = _sample_grid(f.u, cx / s, cy / s)
        nx = px - d[:, :, 0]
        ny = py - d[:, :, 1]
        delta = np.hypot(nx - cx, ny - cy)
        cx, cy = nx, ny
        if delta.max() < tol:
            break
    non_converged = int((delta >= tol).sum())
    v = np.stack([cx - px, cy - py], axis=-1)
    return DisplacementField(v, f.level0_width, f.level0_height), non_converged


def write_field(f: DisplacementField, path) -> None:
    """Serialize to the displacement-field file format (float32 payload)."""
    data = np.ascontiguousarray(f.u, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, f.level0_width,
                              f.level0_height, f.grid_width, f.grid_height))
        fh.write(data.tobytes())


def read_field(path) -> DisplacementField:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated field header")
        magic, version, w0, h0, gw, gh = _HEADER.unpack(head)
        if magic != FIELD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != FIELD_VERSION:
            raise FormatError(f"{path}: unsupported field version {version}")
        payload = fh.read(gh * gw * 2 * 4)
    if len(payload) != gh * gw * 2 * 4:
        raise FormatError(f"{path}: truncated field payload")
    u = np.frombuffer(payload, dtype="<f4").reshape(gh, gw, 2)
    return DisplacementField(u.astype(np.float64), w0, h0)
