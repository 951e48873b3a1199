"""Homogeneous 2-D affine transforms.

All transforms in this package are backward maps: applying a transform to a
coordinate in the fixed image yields the coordinate in the moving image to
sample from. Coordinates are (x right, y down) in pixels; integer positions
are sample points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

_MIN_DET = 1e-8


@dataclass(frozen=True)
class AffineTransform:
    """3x3 homogeneous matrix with exact (0, 0, 1) last row.

    ``matrix`` maps homogeneous fixed coordinates to moving coordinates:
    ``moving = matrix @ (x, y, 1)``.
    """

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"affine matrix must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m[:2])):
            raise NumericalError("affine matrix has non-finite entries")
        m[2] = (0.0, 0.0, 1.0)
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det) <= _MIN_DET:
            raise NumericalError(f"affine linear part is singular (det={det:g})")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:2, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:2, 2]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (..., 2) coordinate arrays through the transform."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.translation

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return the transform applying ``other`` first, then ``self``."""
        return AffineTransform(self.matrix @ other.matrix)

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.matrix))

    def as_cv(self) -> np.ndarray:
        """2x3 float64 matrix accepted by OpenCV warps."""
        return np.ascontiguousarray(self.matrix[:2])

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(3))

    @classmethod
    def from_linear(cls, linear: np.ndarray, translation: np.ndarray) -> "AffineTransform":
        m = np.eye(3)
        m[:2, :2] = linear
        m[:2, 2] = translation
        return cls(m)

    @classmethod
    def translation_by(cls, tx: float, ty: float) -> "AffineTransform":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    @classmethod
    def rotation_deg(cls, angle_deg: float, cx: float = 0.0, cy: float = 0.0) -> "AffineTransform":
        """Rotation by ``angle_deg`` about (cx, cy)."""
        t = np.deg2rad(angle_deg)
        c, s = np.cos(t), np.sin(t)
        rot = cls.from_linear(np.array([[c, -s], [s, c]]), np.zeros(2))
        about = cls.translation_by(cx, cy).compose(rot).compose(cls.translation_by(-cx, -cy))
        return about

    def with_translation_scaled(self, factor: float) -> "AffineTransform":
        """Same linear part, translation multiplied by ``factor``.

        Converts a transform between resolutions that differ by ``factor``
        (coordinates map as x_coarse = x_fine / factor).
        """
        return AffineTransform.from_linear(self.linear, self.translation * factor)
