"""Linear perspective model for a fixed camera.

Kernel widths grow linearly with the image row:

    sigma_u(y) = c1 * y + c2,    sigma_v(y) = c3 * y + c2

``c1`` and ``c3`` are fixed shape constants. The offset ``c2`` is solved from two
pairs of points lying at equal world separation but different image rows, under
the model that an object's pixel extent at row ``y`` is proportional to
``y + c2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCalibration

DEFAULT_C1 = 0.045
DEFAULT_C3 = 0.25


@dataclass(frozen=True)
class PointPair:
    a: tuple[float, float]
    b: tuple[float, float]
    world_separation: float = 1.0

    def __post_init__(self):
        if self.a[1] != self.b[1]:
            raise DegenerateCalibration(f"pair points must share a row, got {self.a} / {self.b}")
        if tuple(self.a) == tuple(self.b):
            raise DegenerateCalibration("pair points coincide")

    @classmethod
    def from_list(cls, values, world_separation=1.0) -> PointPair:
        x1, y1, x2, y2 = values
        return cls((float(x1), float(y1)), (float(x2), float(y2)), world_separation)

    @property
    def row(self) -> float:
        return self.a[1]

    @property
    def pixel_separation(self) -> float:
        return abs(self.a[0] - self.b[0])


@dataclass(frozen=True)
class SceneCalibration:
    c1: float = DEFAULT_C1
    c2: float = 10.0
    c3: float = DEFAULT_C3

    def __post_init__(self):
        if not (self.c1 > 0 and self.c3 > 0):
            raise DegenerateCalibration(f"c1 and c3 must be positive (c1={self.c1}, c3={self.c3})")
        if self.c2 < 0:
            raise DegenerateCalibration(f"negative offset c2={self.c2}")

    def is_valid_for(self, height: int) -> bool:
        """True when both widths are positive on every row of a ``height``-row frame."""
        # both are increasing in y, so row 0 is the binding one
        return sigma_u(self, 0) > 0 and sigma_v(self, 0) > 0 and height > 0


def sigma_u(cal: SceneCalibration, y):
    """Horizontal kernel width at row ``y`` (scalar or array)."""
    return cal.c1 * y + cal.c2


def sigma_v(cal: SceneCalibration, y):
    return cal.c3 * y + cal.c2


def calibrate(pair_near: PointPair, pair_far: PointPair,
              c1: float = DEFAULT_C1, c3: float = DEFAULT_C3) -> SceneCalibration:
    """Solve ``s1 / (y1 + c2) == s2 / (y2 + c2)`` for ``c2``."""
    if pair_near.world_separation != pair_far.world_separation:
        raise DegenerateCalibration("pairs must have equal world separation")
    y1, s1 = pair_near.row, pair_near.pixel_separation
    y2, s2 = pair_far.row, pair_far.pixel_separation
    if y1 == y2:
        raise DegenerateCalibration(f"both pairs lie on row {y1}")
    if s1 == s2:
        raise DegenerateCalibration("pixel separations are equal; offset is unconstrained")
    c2 = (s2 * y1 - s1 * y2) / (s1 - s2)
    if c2 < 0 or not np.isfinite(c2):
        raise DegenerateCalibration(f"solved offset c2={c2:.6g} is negative")
    return SceneCalibration(c1=c1, c2=float(c2), c3=c3)


def separation_at(cal: SceneCalibration, pair: PointPair, y: float) -> float:
    """Pixel separation the calibrated model predicts for ``pair`` moved to row ``y``."""
    return pair.pixel_separation * (y + cal.c2) / (pair.row + cal.c2)
