"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line through the ``verdict`` fixture; the
lines are repeated in a summary section at the end of the pytest run.
"""

import time

import numpy as np
import pytest

from kinetrack.calibration import SceneCalibration
from kinetrack.clustering import Trajectory, cluster_region, coherence
from kinetrack.features import Descriptor, InterestPoint, similarity
from kinetrack.io import write_tracks
from kinetrack.metrics import evaluate, tracks_as_rows, truth_as_rows
from kinetrack.motion import (DifferenceImage, FrameBuffer, SmoothedResponse, adaptive_smooth,
                              frame_difference, threshold_and_label)
from kinetrack.pipeline import run_scenario
from kinetrack.synth import scenario_library
from kinetrack.tracking import _digest
from oracles import flood_fill_partition, smooth_oracle

from conftest import cached_run

END_TO_END = ["lone_walker", "full_occlusion_cross", "scale_change", "pair_separates",
              "pair_joins", "partial_occlusion", "cluttered_background"]


def score(name, frames=None):
    pipe, _, truth = cached_run(name)
    return evaluate(tracks_as_rows(pipe.tracker.sorted_rows()), truth_as_rows(truth), frames)


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_formula_oracles(verdict):
    rng = np.random.default_rng(2024)
    failures, spent = [], {}
    current = [""]

    def call(fn, *args, **kwargs):
        # only time spent in the code under test counts toward the per-check budget
        start = time.perf_counter()
        out = fn(*args, **kwargs)
        spent[current[0]] = spent.get(current[0], 0.0) + time.perf_counter() - start
        return out

    def timed(name, check):
        current[0] = name
        spent[name] = 0.0
        if not check():
            failures.append(name)

    def difference():
        for _ in range(100):
            a, b = rng.random((32, 32)), rng.random((32, 32))
            d = call(frame_difference, FrameBuffer(a, 1), FrameBuffer(b, 0))
            if not np.array_equal(d.values, a - b):
                return False
        return True

    def smoothing():
        for _ in range(10):
            cal = SceneCalibration(c1=rng.uniform(0.01, 0.2), c2=rng.uniform(0.5, 3.0),
                                   c3=rng.uniform(0.01, 0.3))
            d = np.zeros((24, 20))
            d[rng.integers(0, 24), rng.integers(0, 20)] = 1.0
            got = call(adaptive_smooth, DifferenceImage(d, 1, 1), cal).values
            if np.max(np.abs(got - smooth_oracle(d, cal))) > 1e-9:
                return False
        return True

    def labelling():
        for _ in range(1000):
            resp = rng.random((32, 32)) * (rng.random((32, 32)) < rng.uniform(0.2, 0.7))
            got = {frozenset(r.pixels()) for r in call(threshold_and_label, SmoothedResponse(resp), 0.3)}
            if got != flood_fill_partition(resp > 0.3):
                return False
        return True

    def coherence_oracle():
        cal = SceneCalibration(c2=10.0)
        a = Trajectory.from_positions(0, [(10, 50), (12, 50), (15, 50), (19, 50)])
        b = Trajectory.from_positions(0, [(x + 7, y - 3) for x, y in a.points])
        if abs(call(coherence, a, a, cal)) > 1e-12 or abs(call(coherence, a, b, cal)) > 1e-12:
            return False
        scripted = [
            (10.0, [(100, 100)] * 3, [(100, 100), (105, 100), (110, 100)], [0, 5 / 110, 10 / 110]),
            (20.0, [(0, 40)] * 3, [(0, 40), (0, 44), (0, 50)], [0, 4 / 62, 10 / 65]),
            (5.0, [(10, 10), (11, 11), (12, 12), (13, 13)], [(13, 14), (14, 15), (16, 16), (19, 17)],
             [5 / 17, 5 / 18, np.hypot(4, 4) / 19, np.hypot(6, 4) / 20]),
        ]
        for c2, p, q, ws in scripted:
            ws = np.asarray(ws, dtype=float)
            want = np.mean(ws ** 2) - np.mean(ws) ** 2
            got = call(coherence, Trajectory.from_positions(0, p), Trajectory.from_positions(0, q),
                            SceneCalibration(c2=c2))
            if abs(got - want) > 1e-9:
                return False
        return True

    def similarity_oracle():
        for _ in range(1000):
            a = Descriptor(rng.random(128) * (rng.random(128) < 0.5) + 1e-3)
            b = Descriptor(rng.random(128) * (rng.random(128) < 0.5) + 1e-3)
            s = call(similarity, a, b)
            if not (0.0 <= s <= 1.0 and abs(s - call(similarity, b, a)) <= 1e-12
                    and abs(call(similarity, a, a) - 1.0) <= 1e-12):
                return False
        return True

    for name, check in [("frame_difference", difference), ("adaptive_smooth", smoothing),
                        ("threshold_and_label", labelling), ("coherence", coherence_oracle),
                        ("similarity", similarity_oracle)]:
        timed(name, check)
    slowest = max(spent, key=spent.get)
    ok = not failures and spent[slowest] < 1.0
    verdict(1, "formula oracles", ok, f"failed={failures} slowest={slowest} {spent[slowest]:.2f}s")


# -- 2 -----------------------------------------------------------------------

def rigid_two_groups(rng, n=20, frames=11, diverge_at=5):
    """Two rigid point groups moving together, then apart in opposite directions."""
    points, trajs, group = [], {}, {}
    steps = np.arange(frames)
    late = np.clip(steps - diverge_at, 0, None)
    for g, (cx, vx, vy) in enumerate(((50, -1.5, -0.5), (72, 1.5, 0.5))):
        xs = rng.uniform(cx - 10, cx + 10, n)
        ys = rng.uniform(50, 70, n)
        dx, dy = steps + vx * late, vy * late
        for x, y in zip(xs, ys):
            p = InterestPoint(float(x + dx[-1]), float(y + dy[-1]), float(rng.choice([1.6, 2.26, 3.2])), 0)
            points.append(p)
            trajs[p] = Trajectory.from_positions(0, np.stack([x + dx, y + dy], axis=1))
            group[p] = g
    return points, trajs, group


def test_criterion_2_two_rigid_groups(verdict):
    cal = SceneCalibration(c2=20.0)
    bad = []
    for seed in range(50):
        points, trajs, group = rigid_two_groups(np.random.default_rng(seed))
        clusters = cluster_region(points, trajs, cal)
        cross = sum(len(c.members) - max(sum(group[p] == g for p in c.members) for g in (0, 1))
                    for c in clusters)
        if len(clusters) != 2 or cross:
            bad.append((seed, len(clusters), cross))
    verdict(2, "two rigid groups give two clusters over 50 seeds", not bad, f"bad seeds={bad}")


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_lone_walker(verdict):
    start = time.perf_counter()
    pipe, report, truth = run_scenario(scenario_library()["lone_walker"])
    seconds = time.perf_counter() - start
    m = evaluate(tracks_as_rows(pipe.tracker.sorted_rows()), truth_as_rows(truth))["walker"]
    ok = (seconds < 30 and report.clusters == 1 and m.coverage >= 0.9 and m.identity_switches == 0)
    verdict(3, "lone_walker", ok, f"{seconds:.1f}s clusters={report.clusters} "
                                   f"coverage={m.coverage:.3f} switches={m.identity_switches}")


# -- 4 -----------------------------------------------------------------------

def test_criterion_4_full_occlusion(verdict):
    pipe, _, truth = cached_run("full_occlusion_cross")
    hidden = [r.frame for r in truth.rows if r.visibility == 0]
    counts = {e[1]: e[2] for e in pipe.tracker.audit if e[0] == "clusters"}
    both = min(t for t, n in counts.items() if n >= 2)
    throughout = all(n == 2 for t, n in counts.items() if t >= both)
    totals = {e[1]: e[2] + e[3] for e in pipe.tracker.audit if e[0] == "clusters"}

    def overlapping(f):
        a, b = truth.at(f)["near"].bbox, truth.at(f)["far"].bbox
        return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])

    separated = max(f for f in range(len(counts)) if overlapping(f)) + 1
    whole = score("full_occlusion_cross")
    after = score("full_occlusion_cross", range(separated, 10**9))
    switches = sum(m.identity_switches for m in whole.values())
    cover = {sid: round(m.coverage, 3) for sid, m in after.items()}
    ok = (len(hidden) >= 3 and throughout and max(totals.values()) == 2 and switches == 0
          and all(c >= 0.8 for c in cover.values()))
    verdict(4, "full_occlusion_cross", ok, f"hidden frames={len(hidden)} two clusters from frame {both} "
                                           f"switches={switches} post-separation coverage={cover}")


# -- 5 -----------------------------------------------------------------------

def test_criterion_5_scale_change(verdict):
    pipe, report, _ = cached_run("scale_change")
    tr = pipe.tracker
    m = score("scale_change")["walker"]
    clusters = list(tr.clusters.values()) + list(tr.retired.values())
    members = [tr.tracks[k] for c in clusters for k in c.members]
    short = sum(t.lifetime < 15 for t in members) / len(members)
    ok = len(clusters) == 1 and report.clusters == 1 and m.coverage >= 0.8 and short >= 0.3
    verdict(5, "scale_change", ok, f"clusters={len(clusters)} coverage={m.coverage:.3f} "
                                   f"short-lived tracks={short:.0%} of {len(members)}")


# -- 6 -----------------------------------------------------------------------

def test_criterion_6_permanence(verdict):
    problems = []
    for name in END_TO_END:
        tr = cached_run(name)[0].tracker
        logged = {}
        for e in tr.audit:
            if e[0] == "append":
                logged.setdefault(e[1], []).append(e[2:])
        for tid, track in tr.tracks.items():
            now = [(a.frame, a.x, a.y, _digest(a.descriptor)) for a in track.appearances]
            if logged.get(tid) != now:
                problems.append(f"{name}: track {tid} differs from its log")
        if set(logged) - set(tr.tracks):
            problems.append(f"{name}: logged tracks deleted")
        snaps = [e for e in tr.audit if e[0] == "clusters"]
        retired_at = {}
        for e in tr.audit:
            if e[0] == "retire":
                retired_at[e[1]] = retired_at.get(e[1], 0) + 1
        for (_, t0, alive0, ret0), (_, t1, alive1, ret1) in zip(snaps, snaps[1:]):
            if alive1 + ret1 < alive0 + ret0 or alive1 < alive0 - retired_at.get(t1, 0):
                problems.append(f"{name}: cluster count fell at frame {t1}")
    verdict(6, "appearance records permanent and no merges", not problems, "; ".join(problems[:5]))


# -- 7 -----------------------------------------------------------------------

def test_criterion_7_determinism(verdict, tmp_path):
    sc = scenario_library()["lone_walker"]
    for i in range(2):
        pipe, _, _ = run_scenario(sc)
        write_tracks(tmp_path / f"run{i}.csv", pipe.tracker.sorted_rows())
    a, b = (tmp_path / "run0.csv").read_bytes(), (tmp_path / "run1.csv").read_bytes()
    verdict(7, "repeated lone_walker runs give identical track CSVs", a == b and len(a) > 100,
            f"{len(a)} bytes")


# -- 8 -----------------------------------------------------------------------

def test_criterion_8_detector_confined_to_regions(verdict):
    _, report, _ = cached_run("lone_walker")
    ok = report.max_detector_visit_fraction <= 0.25
    verdict(8, "detector visits at most 25% of pixels per frame", ok,
            f"max={report.max_detector_visit_fraction:.3f} mean={report.mean_detector_visit_fraction:.3f}")


@pytest.mark.parametrize("name", END_TO_END)
def test_no_identity_switches_in_library(name):
    assert all(m.identity_switches == 0 for m in score(name).values())
