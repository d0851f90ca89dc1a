"""Motion regions from frame differencing.

Two frames ``k`` apart are subtracted, the difference is smoothed with a Gaussian
whose width depends on the image row, and connected components of the thresholded
absolute response become motion regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .calibration import SceneCalibration, sigma_u, sigma_v
from .errors import DimensionMismatch

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class FrameBuffer:
    pixels: np.ndarray  # H x W, float64 in [0, 1]
    index: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"frame must be a non-empty 2-D array, got shape {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DifferenceImage:
    values: np.ndarray
    base_index: int
    gap: int


@dataclass(frozen=True)
class SmoothedResponse:
    values: np.ndarray


@dataclass(eq=False)
class MotionRegion:
    """An 8-connected set of motion pixels.

    ``mask`` covers only the bounding box; ``bbox`` is inclusive
    ``(x_min, y_min, x_max, y_max)`` in frame coordinates.
    """

    id: str
    frame_index: int
    mask: np.ndarray
    bbox: tuple[int, int, int, int]
    area: int = field(init=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.area = int(self.mask.sum())

    @classmethod
    def from_pixels(cls, id, frame_index, pixels) -> MotionRegion:
        """Build from an iterable of ``(x, y)`` coordinates."""
        xs, ys = zip(*pixels)
        x0, y0, x1, y1 = min(xs), min(ys), max(xs), max(ys)
        mask = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
        mask[np.array(ys) - y0, np.array(xs) - x0] = True
        return cls(id, frame_index, mask, (x0, y0, x1, y1))

    def pixels(self) -> set[tuple[int, int]]:
        ys, xs = np.nonzero(self.mask)
        return set(zip((xs + self.bbox[0]).tolist(), (ys + self.bbox[1]).tolist()))

    def contains(self, x: int, y: int) -> bool:
        x0, y0, x1, y1 = self.bbox
        return x0 <= x <= x1 and y0 <= y <= y1 and bool(self.mask[y - y0, x - x0])

    def paint(self, canvas: np.ndarray, value=True) -> None:
        x0, y0, x1, y1 = self.bbox
        view = canvas[y0:y1 + 1, x0:x1 + 1]
        view[self.mask] = value

    def intersects(self, other: MotionRegion) -> bool:
        ax0, ay0, ax1, ay1 = self.bbox
        bx0, by0, bx1, by1 = other.bbox
        x0, y0 = max(ax0, bx0), max(ay0, by0)
        x1, y1 = min(ax1, bx1), min(ay1, by1)
        if x0 > x1 or y0 > y1:
            return False
        a = self.mask[y0 - ay0:y1 - ay0 + 1, x0 - ax0:x1 - ax0 + 1]
        b = other.mask[y0 - by0:y1 - by0 + 1, x0 - bx0:x1 - bx0 + 1]
        return bool(np.any(a & b))

    def overlap_area(self, other: MotionRegion) -> int:
        ax0, ay0, ax1, ay1 = self.bbox
        bx0, by0, bx1, by1 = other.bbox
        x0, y0 = max(ax0, bx0), max(ay0, by0)
        x1, y1 = min(ax1, bx1), min(ay1, by1)
        if x0 > x1 or y0 > y1:
            return 0
        a = self.mask[y0 - ay0:y1 - ay0 + 1, x0 - ax0:x1 - ax0 + 1]
        b = other.mask[y0 - by0:y1 - by0 + 1, x0 - bx0:x1 - bx0 + 1]
        return int(np.count_nonzero(a & b))


@dataclass(frozen=True)
class MotionParams:
    frame_gap: int = 2
    threshold: float = 0.03
    min_area: int = 25
    # "before": smooth |difference|; "after": smooth the signed difference, then take |.|
    rectify: str = "before"


def frame_difference(current: FrameBuffer, past: FrameBuffer) -> DifferenceImage:
    if current.pixels.shape != past.pixels.shape:
        raise DimensionMismatch(f"{current.pixels.shape} vs {past.pixels.shape}")
    gap = current.index - past.index
    if gap < 1:
        raise ValueError(f"past frame must precede current (gap={gap})")
    return DifferenceImage(current.pixels - past.pixels, current.index, gap)


def kernel_radius(width: float) -> int:
    """Half-width of the truncated kernel for a given row width parameter.

    The row width enters the exponent as a variance (``exp(-u^2 / (2 w))``), so
    three standard deviations is ``3 * sqrt(w)``.
    """
    return max(1, int(math.ceil(3.0 * math.sqrt(width))))


def gaussian_taps(width: float) -> np.ndarray:
    r = kernel_radius(width)
    u = np.arange(-r, r + 1, dtype=float)
    return np.exp(-0.5 * u * u / width)


def adaptive_smooth(diff: DifferenceImage, cal: SceneCalibration) -> SmoothedResponse:
    """Row-adaptive Gaussian smoothing of a difference image, absolute value.

    The kernel applied at output row ``y`` is separable, with widths
    ``sigma_u(y)`` and ``sigma_v(y)`` taken from the calibration, truncated at
    three standard deviations and renormalized to unit mass. Taps falling outside
    the frame contribute zero.
    """
    d = np.asarray(diff.values, dtype=float)
    h, w = d.shape
    if not cal.is_valid_for(h):
        raise ValueError("calibration yields non-positive kernel widths for this frame")
    rows = np.arange(h)
    su = sigma_u(cal, rows)
    sv = sigma_v(cal, rows)
    rv_max = kernel_radius(float(sv[-1]))
    padded = np.zeros((h + 2 * rv_max, w))
    padded[rv_max:rv_max + h] = d
    out = np.empty_like(d)
    for y in range(h):
        gv = gaussian_taps(float(sv[y]))
        gu = gaussian_taps(float(su[y]))
        rv = (len(gv) - 1) // 2
        ru = (len(gu) - 1) // 2
        band = padded[y + rv_max - rv:y + rv_max + rv + 1]
        col = gv @ band
        full = np.convolve(col, gu)
        out[y] = full[ru:ru + w] / (gv.sum() * gu.sum())
    return SmoothedResponse(np.abs(out))


def threshold_and_label(resp: SmoothedResponse, threshold: float, min_area: int = 1,
                        frame_index: int = 0) -> list[MotionRegion]:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    above = np.asarray(resp.values) > threshold
    labels, n = ndimage.label(above, structure=EIGHT_CONNECTED)
    regions = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        mask = labels[sl] == lab
        area = int(mask.sum())
        if area < min_area:
            continue
        ys, xs = sl
        bbox = (xs.start, ys.start, xs.stop - 1, ys.stop - 1)
        regions.append(MotionRegion(f"{frame_index}.{len(regions)}", frame_index, mask, bbox))
    return regions


def detect_motion_regions(current: FrameBuffer, past: FrameBuffer, cal: SceneCalibration,
                          params: MotionParams = MotionParams()) -> list[MotionRegion]:
    diff = frame_difference(current, past)
    if params.rectify == "before":
        diff = DifferenceImage(np.abs(diff.values), diff.base_index, diff.gap)
    elif params.rectify != "after":
        raise ValueError(f"rectify must be 'before' or 'after', got {params.rectify!r}")
    resp = adaptive_smooth(diff, cal)
    return threshold_and_label(resp, params.threshold, params.min_area, current.index)


def region_union_mask(regions, shape) -> np.ndarray:
    canvas = np.zeros(shape, dtype=bool)
    for r in regions:
        r.paint(canvas)
    return canvas
