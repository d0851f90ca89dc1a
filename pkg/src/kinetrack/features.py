"""Interest points and local appearance descriptors.

Detection is a compact difference-of-Gaussians scan: a three-octave pyramid is
built over a padded crop of each motion region and strict 3x3x3 extrema above a
contrast threshold are kept. There is no orientation assignment and no subpixel
refinement, so descriptors are upright 4x4x8 gradient-orientation histograms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FlatPatch
from .motion import FrameBuffer, MotionRegion

DESCRIPTOR_SIZE = 128
BASE_SIGMA = 1.6
INPUT_BLUR = 0.5


@dataclass(frozen=True)
class InterestPoint:
    x: float
    y: float
    scale: float
    frame_index: int
    region_id: str | None = None

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def sort_key(self):
        return (self.y, self.x, self.scale)


@dataclass(frozen=True, eq=False)
class Descriptor:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (DESCRIPTOR_SIZE,):
            raise ValueError(f"descriptor must have {DESCRIPTOR_SIZE} values, got {v.shape}")
        if np.any(v < 0):
            raise ValueError("descriptor values must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __eq__(self, other):
        return isinstance(other, Descriptor) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class FeatureParams:
    contrast_threshold: float = 0.02
    edge_ratio: float = 10.0
    octaves: int = 3
    intervals: int = 2
    margin: int = 6  # crop padding around each region, also caps the gating dilation
    upsample: bool = True  # first octave at twice the input resolution


def similarity(d1: Descriptor, d2: Descriptor) -> float:
    """Cosine of the angle between two descriptors, in [0, 1]."""
    a, b = d1.values, d2.values
    c = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return min(1.0, max(0.0, c))


def similarity_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between the rows of two descriptor stacks."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    return np.clip(a @ b.T, 0.0, 1.0)


# -- detection ---------------------------------------------------------------

def _crop_window(region: MotionRegion, shape, margin: int):
    h, w = shape
    x0, y0, x1, y1 = region.bbox
    return max(0, x0 - margin), max(0, y0 - margin), min(w, x1 + margin + 1), min(h, y1 + margin + 1)


def detection_footprint(shape, regions, params: FeatureParams = FeatureParams()) -> np.ndarray:
    """Boolean mask of the pixels the detector touches for these regions."""
    out = np.zeros(shape, dtype=bool)
    for r in regions:
        cx0, cy0, cx1, cy1 = _crop_window(r, shape, params.margin)
        out[cy0:cy1, cx0:cx1] = True
    return out


def _dog_octaves(img: np.ndarray, params: FeatureParams):
    """Yield ``(octave, dog_stack, sigmas)`` for each octave of ``img``.

    Octave ``o`` has pixel pitch ``2**o`` input pixels; with upsampling the first
    octave is ``-1``. ``sigmas`` are in octave pixels.
    """
    s = params.intervals
    k = 2.0 ** (1.0 / s)
    sigmas = [BASE_SIGMA * k ** i for i in range(s + 3)]
    first, blur = 0, INPUT_BLUR
    if params.upsample:
        img = ndimage.zoom(img, 2, order=1, mode="nearest", grid_mode=True)
        first, blur = -1, 2 * INPUT_BLUR
    base = ndimage.gaussian_filter(img, math.sqrt(BASE_SIGMA ** 2 - blur ** 2), mode="nearest")
    for octave in range(first, first + params.octaves):
        if min(base.shape) < 3:
            break
        levels = [base]
        for i in range(1, s + 3):
            inc = math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2)
            levels.append(ndimage.gaussian_filter(levels[-1], inc, mode="nearest"))
        dog = np.stack([levels[i + 1] - levels[i] for i in range(s + 2)])
        yield octave, dog, sigmas
        base = levels[s][::2, ::2]


def _extrema(dog: np.ndarray, i: int, threshold: float, edge_ratio: float):
    """26-neighbour extrema of DoG layer ``i`` that pass contrast and edge tests.

    Comparisons are strict against neighbours that precede the sample in
    (scale, row, column) order and non-strict against those that follow, so a
    plateau of tied samples (common around symmetric blobs on the upsampled grid)
    yields exactly one extremum, its first sample.
    """
    d = dog[i]
    h, w = d.shape
    if h < 3 or w < 3:
        return np.empty((0, 2), dtype=int)
    core = d[1:-1, 1:-1]
    is_max = core >= threshold
    is_min = core <= -threshold
    for dz in (-1, 0, 1):
        layer = dog[i + dz]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dz == 0 and dy == 0 and dx == 0:
                    continue
                nb = layer[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
                if (dz, dy, dx) < (0, 0, 0):
                    is_max &= core > nb
                    is_min &= core < nb
                else:
                    is_max &= core >= nb
                    is_min &= core <= nb
    ys, xs = np.nonzero(is_max | is_min)
    ys, xs = ys + 1, xs + 1
    # principal curvature ratio test on the 2x2 spatial Hessian
    dxx = d[ys, xs + 1] + d[ys, xs - 1] - 2 * d[ys, xs]
    dyy = d[ys + 1, xs] + d[ys - 1, xs] - 2 * d[ys, xs]
    dxy = (d[ys + 1, xs + 1] - d[ys + 1, xs - 1] - d[ys - 1, xs + 1] + d[ys - 1, xs - 1]) / 4
    tr, det = dxx + dyy, dxx * dyy - dxy * dxy
    r = edge_ratio
    keep = (det > 0) & (tr * tr * r < (r + 1) ** 2 * det)
    return np.stack([ys[keep], xs[keep]], axis=1)


def detect(frame: FrameBuffer, regions: list[MotionRegion],
           params: FeatureParams = FeatureParams()) -> list[InterestPoint]:
    """DoG extrema inside the motion regions of ``frame``, sorted by (y, x, scale)."""
    img = frame.pixels
    # zoom(grid_mode=True) puts upsampled pixel j at input coordinate j/2 - 1/4
    shift = 0.25 if params.upsample else 0.0
    found = {}
    for region in regions:
        cx0, cy0, cx1, cy1 = _crop_window(region, img.shape, params.margin)
        crop = img[cy0:cy1, cx0:cx1]
        outside = np.ones(crop.shape, dtype=bool)
        rx0, ry0, rx1, ry1 = region.bbox
        outside[ry0 - cy0:ry1 - cy0 + 1, rx0 - cx0:rx1 - cx0 + 1] &= ~region.mask
        dist = ndimage.distance_transform_edt(outside)
        for octave, dog, sigmas in _dog_octaves(crop, params):
            step = 2.0 ** octave
            for i in range(1, params.intervals + 1):
                scale = sigmas[i] * step
                reach = min(scale, params.margin)
                for yy, xx in _extrema(dog, i, params.contrast_threshold, params.edge_ratio):
                    py, px = yy * step - shift, xx * step - shift
                    iy, ix = max(0, int(round(py))), max(0, int(round(px)))
                    if iy >= crop.shape[0] or ix >= crop.shape[1] or dist[iy, ix] > reach:
                        continue
                    key = (py + cy0, px + cx0, round(scale, 9))
                    if key not in found:
                        found[key] = InterestPoint(float(px + cx0), float(py + cy0), float(scale),
                                                   frame.index, region.id)
    return [found[k] for k in sorted(found)]


# -- description -------------------------------------------------------------

def _sample_step(scale: float) -> float:
    return scale / (BASE_SIGMA * math.sqrt(2.0))


def describe(frame: FrameBuffer, point: InterestPoint, eps: float = 1e-10) -> Descriptor:
    """Upright 4x4 cell, 8 orientation histogram of the smoothed gradient field.

    Samples a 16x16 grid (4x4 samples per cell) spaced by a scale-proportional
    step, Gaussian-weights the magnitudes, bins trilinearly, then normalizes,
    clips at 0.2 and renormalizes.
    """
    img = frame.pixels
    h, w = img.shape
    step = _sample_step(point.scale)
    half = 8.5 * step + 1
    reach = int(math.ceil(half + 3 * point.scale)) + 2
    x0, x1 = int(point.x) - reach, int(point.x) + reach + 1
    y0, y1 = int(point.y) - reach, int(point.y) + reach + 1
    if x1 <= 0 or y1 <= 0 or x0 >= w or y0 >= h:
        raise ValueError("support window does not intersect the frame")
    cx0, cy0 = max(0, x0), max(0, y0)
    crop = img[cy0:min(h, y1), cx0:min(w, x1)]
    blurred = ndimage.gaussian_filter(crop, math.sqrt(max(point.scale ** 2 - INPUT_BLUR ** 2, 0.01)),
                                      mode="nearest")

    offsets = (np.arange(16) - 7.5) * step
    gy, gx = np.meshgrid(point.y - cy0 + offsets, point.x - cx0 + offsets, indexing="ij")

    def sample(dy, dx):
        return ndimage.map_coordinates(blurred, [gy + dy, gx + dx], order=1, mode="nearest")

    dx = (sample(0, step) - sample(0, -step)) / 2
    dy = (sample(step, 0) - sample(-step, 0)) / 2
    mag = np.hypot(dx, dy)
    if float(np.sum(mag * mag)) < eps:
        raise FlatPatch(f"no gradient energy around ({point.x}, {point.y})")
    idx = np.arange(16) - 7.5
    weight = np.exp(-(idx[:, None] ** 2 + idx[None, :] ** 2) / (2 * 8.0 ** 2))
    mag = mag * weight
    theta = np.mod(np.arctan2(dy, dx), 2 * np.pi)

    rbin = (np.arange(16) + 0.5) / 4 - 0.5
    rb = np.broadcast_to(rbin[:, None], (16, 16))
    cb = np.broadcast_to(rbin[None, :], (16, 16))
    ob = theta * 8 / (2 * np.pi)
    r0, c0, o0 = np.floor(rb).astype(int), np.floor(cb).astype(int), np.floor(ob).astype(int)
    fr, fc, fo = rb - r0, cb - c0, ob - o0
    hist = np.zeros((4, 4, 8))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                rr, cc, oo = r0 + dr, c0 + dc, (o0 + do) % 8
                ok = (rr >= 0) & (rr < 4) & (cc >= 0) & (cc < 4)
                np.add.at(hist, (rr[ok], cc[ok], oo[ok]), (mag * wr * wc * wo)[ok])
    v = hist.ravel()
    n = np.linalg.norm(v)
    if n < eps:
        raise FlatPatch(f"empty histogram around ({point.x}, {point.y})")
    v = np.minimum(v / n, 0.2)
    return Descriptor(v / np.linalg.norm(v))


def describe_all(frame: FrameBuffer, points: list[InterestPoint]):
    """Describe every point, dropping flat patches. Returns ``(point, descriptor)`` pairs."""
    out = []
    for p in points:
        try:
            out.append((p, describe(frame, p)))
        except FlatPatch:
            continue
    return out
