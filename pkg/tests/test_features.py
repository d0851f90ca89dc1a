import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from kinetrack.errors import FlatPatch
from kinetrack.features import (Descriptor, FeatureParams, InterestPoint, _extrema, describe, describe_all,
                                detect, detection_footprint, similarity, similarity_matrix)
from kinetrack.motion import FrameBuffer, MotionRegion, detect_motion_regions, region_union_mask
from kinetrack.pipeline import scenario_config
from kinetrack.synth import render


def box_region(x0, y0, x1, y1, frame_index=0, rid="r"):
    mask = np.ones((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    return MotionRegion(rid, frame_index, mask, (x0, y0, x1, y1))


def textured(rng, shape, cell=3):
    blocks = rng.random((shape[0] // cell + 1, shape[1] // cell + 1))
    return np.kron(blocks, np.ones((cell, cell)))[:shape[0], :shape[1]]


@pytest.fixture(scope="module")
def walker_frame(library):
    sc = library["lone_walker"]
    frames, _ = render(sc)
    cal = scenario_config(sc).calibration.resolve()
    regions = detect_motion_regions(frames[40], frames[38], cal)
    return frames[40], regions


# -- detect ------------------------------------------------------------------

def test_flat_frame_no_points():
    frame = FrameBuffer(np.full((40, 40), 0.4), 0)
    assert detect(frame, [box_region(5, 5, 34, 34)]) == []


def test_disk_detected_near_center():
    img = np.full((40, 40), 0.1)
    yy, xx = np.mgrid[:40, :40]
    img[(yy - 20) ** 2 + (xx - 17) ** 2 <= 6] = 0.9  # 5 px across
    pts = detect(FrameBuffer(img, 0), [box_region(8, 8, 30, 30)])
    assert pts
    assert min(np.hypot(p.x - 17, p.y - 20) for p in pts) <= 2.0


def test_sprite_outside_regions_is_ignored(rng):
    img = np.full((60, 60), 0.2)
    img[35:55, 35:55] = textured(rng, (20, 20))
    pts = detect(FrameBuffer(img, 0), [box_region(2, 2, 12, 12)])
    assert not any(30 <= p.x <= 59 and 30 <= p.y <= 59 for p in pts)
    assert detect(FrameBuffer(img, 0), []) == []


def test_points_respect_region_gating(walker_frame):
    frame, regions = walker_frame
    pts = detect(frame, regions)
    assert len(pts) >= 10
    outside = ~region_union_mask(regions, frame.pixels.shape)
    dist = ndimage.distance_transform_edt(outside)
    for p in pts:
        assert p.scale > 0
        assert dist[int(round(p.y)), int(round(p.x))] <= p.scale + 1e-9
        assert p.frame_index == frame.index and p.region_id in {r.id for r in regions}


def test_points_sorted_and_deterministic(walker_frame):
    frame, regions = walker_frame
    a, b = detect(frame, regions), detect(frame, regions)
    assert a == b
    assert [p.sort_key() for p in a] == sorted(p.sort_key() for p in a)


def test_footprint_covers_regions(walker_frame):
    frame, regions = walker_frame
    fp = detection_footprint(frame.pixels.shape, regions)
    assert np.all(fp[region_union_mask(regions, frame.pixels.shape)])


def brute_extrema(dog, i, thr, r):
    out = []
    _, h, w = dog.shape
    for y, x in itertools.product(range(1, h - 1), range(1, w - 1)):
        v = dog[i, y, x]
        if abs(v) < thr:
            continue
        cube = dog[i - 1:i + 2, y - 1:y + 2, x - 1:x + 2].ravel().tolist()
        before, after = cube[:13], cube[14:]
        is_max = all(v > c for c in before) and all(v >= c for c in after)
        is_min = all(v < c for c in before) and all(v <= c for c in after)
        if not (is_max or is_min):
            continue
        d = dog[i]
        dxx = d[y, x + 1] + d[y, x - 1] - 2 * v
        dyy = d[y + 1, x] + d[y - 1, x] - 2 * v
        dxy = (d[y + 1, x + 1] - d[y + 1, x - 1] - d[y - 1, x + 1] + d[y - 1, x - 1]) / 4
        det = dxx * dyy - dxy ** 2
        if det > 0 and (dxx + dyy) ** 2 / det < (r + 1) ** 2 / r:
            out.append((y, x))
    return out


def test_plateau_yields_one_extremum():
    dog = np.zeros((3, 6, 6))
    dog[1, 2:4, 2:4] = 0.5
    dog[1, 1:5, 1:5] += 0.1
    assert [tuple(p) for p in _extrema(dog, 1, 0.01, 10.0)] == [(2, 2)]


def test_extrema_match_brute_force_scan(rng):
    for trial in range(20):
        if trial % 2:  # quantized values produce ties
            dog = np.round(ndimage.gaussian_filter(rng.normal(size=(4, 16, 16)), (0, 1, 1)) * 20) / 100
            got = [tuple(p) for p in _extrema(dog, 1, 0.01, 10.0)]
            assert sorted(got) == sorted(brute_extrema(dog, 1, 0.01, 10.0))
            continue
        dog = ndimage.gaussian_filter(rng.normal(size=(4, 16, 16)), (0, 1, 1)) * 0.2
        got = [tuple(p) for p in _extrema(dog, 1, 0.01, 10.0)]
        assert sorted(got) == sorted(brute_extrema(dog, 1, 0.01, 10.0))


# -- describe ----------------------------------------------------------------

def test_descriptor_norm_and_shape(walker_frame):
    frame, regions = walker_frame
    pairs = describe_all(frame, detect(frame, regions))
    assert pairs
    for _, d in pairs:
        assert d.values.shape == (128,)
        assert np.all(d.values >= 0)
        assert d.norm == pytest.approx(1.0, abs=1e-6)


def test_gain_and_offset_invariance(rng):
    img = 0.2 + 0.5 * textured(rng, (48, 48))
    p = InterestPoint(24.0, 24.0, 2.0, 0)
    d = describe(FrameBuffer(img, 0), p)
    half = describe(FrameBuffer(img * 0.5, 0), p)
    shifted = describe(FrameBuffer(img + 0.1, 0), p)
    np.testing.assert_allclose(half.values, d.values, atol=1e-6)
    np.testing.assert_allclose(shifted.values, d.values, atol=1e-6)


def test_step_edge_concentrates_mass():
    img = np.full((48, 48), 0.2)
    img[24:, :] = 0.8  # intensity rises downwards: gradient points along +y
    d = describe(FrameBuffer(img, 0), InterestPoint(24.0, 23.5, 2.0, 0))
    by_orientation = d.values.reshape(4, 4, 8).sum(axis=(0, 1))
    theta = np.pi / 2
    nearest = int(round(theta / (np.pi / 4))) % 8
    two = sorted({nearest, (nearest + 1) % 8}, key=lambda b: -by_orientation[b])
    assert by_orientation[two].sum() / by_orientation.sum() >= 0.6


def test_constant_patch_is_flat():
    with pytest.raises(FlatPatch):
        describe(FrameBuffer(np.full((32, 32), 0.5), 0), InterestPoint(16.0, 16.0, 1.6, 0))
    assert describe_all(FrameBuffer(np.full((32, 32), 0.5), 0), [InterestPoint(16.0, 16.0, 1.6, 0)]) == []


def test_describe_deterministic(walker_frame):
    frame, regions = walker_frame
    pts = detect(frame, regions)[:5]
    assert [describe(frame, p) for p in pts] == [describe(frame, p) for p in pts]


def test_descriptor_validation():
    with pytest.raises(ValueError):
        Descriptor(np.ones(127))
    with pytest.raises(ValueError):
        Descriptor(-np.ones(128))


# -- similarity --------------------------------------------------------------

def one_hot(i):
    v = np.zeros(128)
    v[i] = 1.0
    return Descriptor(v)


def test_similarity_basics():
    d = one_hot(3)
    assert similarity(d, d) == 1.0
    assert similarity(one_hot(3), one_hot(9)) == 0.0


def test_similarity_random_pairs(rng):
    for _ in range(1000):
        a = Descriptor(rng.random(128) * (rng.random(128) < 0.5) + 1e-3)
        b = Descriptor(rng.random(128) * (rng.random(128) < 0.5) + 1e-3)
        s = similarity(a, b)
        assert 0.0 <= s <= 1.0
        assert abs(s - similarity(b, a)) <= 1e-12
        assert similarity(a, a) == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.floats(0.0, 10.0), min_size=128, max_size=128).filter(lambda v: sum(v) > 0),
       st.lists(st.floats(0.0, 10.0), min_size=128, max_size=128).filter(lambda v: sum(v) > 0))
def test_similarity_matrix_agrees(a, b):
    da, db = Descriptor(np.array(a)), Descriptor(np.array(b))
    m = similarity_matrix(np.stack([da.values]), np.stack([db.values]))
    assert m[0, 0] == pytest.approx(similarity(da, db), abs=1e-12)
