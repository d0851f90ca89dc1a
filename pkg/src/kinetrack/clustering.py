"""Spatio-kinetic grouping of interest points.

Two points are linked when one is among the other's K nearest neighbours and the
perspective-weighted distance between their trajectories stays nearly constant
(low variance) over their common support. Linked points share a cluster unless
they already belong to two different clusters.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .calibration import SceneCalibration
from .errors import InsufficientOverlap, NotComparable
from .features import InterestPoint


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Contiguous per-frame positions starting at frame ``start``."""

    start: int
    points: np.ndarray  # (n, 2) of (x, y)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("trajectory needs at least one position")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_positions(cls, start: int, positions) -> Trajectory:
        return cls(start, np.asarray(positions, dtype=float))

    @property
    def end(self) -> int:
        return self.start + len(self.points) - 1

    def clip(self, lo: int, hi: int) -> Trajectory | None:
        a, b = max(lo, self.start), min(hi, self.end)
        if a > b:
            return None
        return Trajectory(a, self.points[a - self.start:b - self.start + 1])


@dataclass(eq=False)
class Cluster:
    id: int
    members: set = field(default_factory=set)
    region_id: str | None = None
    created_at: int = 0
    # tracker bookkeeping
    region: object = None
    stale: bool = False
    parent: int | None = None
    children: list = field(default_factory=list)
    retired_at: int | None = None
    last_matched: int | None = None
    split_streak: int = 0


def coherence(a: Trajectory, b: Trajectory, cal: SceneCalibration, epsilon_den: float = 1.0) -> float:
    """Variance of the perspective-weighted separation over the common support."""
    t1, t2 = max(a.start, b.start), min(a.end, b.end)
    if t2 - t1 + 1 < 2:
        raise InsufficientOverlap(f"common support [{t1}, {t2}] has fewer than 2 frames")
    pa = a.points[t1 - a.start:t2 - a.start + 1]
    pb = b.points[t1 - b.start:t2 - b.start + 1]
    den = (pa[:, 1] + pb[:, 1]) / 2 + cal.c2
    if np.any(den < epsilon_den):
        raise NotComparable(f"perspective denominator {den.min():.3g} below {epsilon_den}")
    diff = pa - pb
    w = np.hypot(diff[:, 0], diff[:, 1]) / den
    return float(max(0.0, np.mean(w * w) - np.mean(w) ** 2))


def neighbors(point: InterestPoint, candidates, K: int) -> list[InterestPoint]:
    """The ``K`` candidates nearest ``point`` (excluding itself), ties by (y, x, scale)."""
    others = [c for c in candidates if c is not point and c != point]
    others.sort(key=lambda c: ((c.x - point.x) ** 2 + (c.y - point.y) ** 2, *c.sort_key()))
    return others[:K]


def cluster_region(points, trajectories, cal: SceneCalibration, K: int = 6,
                   t_coherence: float = 1e-4, existing=(), track_ids=None,
                   epsilon_den: float = 1.0, new_id=None, min_overlap: int = 2) -> list[Cluster]:
    """Group the points of one motion region into clusters.

    Points whose track id (``track_ids[p]``, default the point itself) is a member of
    one of the ``existing`` clusters start out assigned to it. Points are visited in
    (y, x, scale) order and each coherent K-nearest-neighbour link unites the two
    groups, except that two different existing clusters are never united. Groups
    that touch no existing cluster become new clusters, singletons included.

    Pairs whose trajectories share fewer than ``min_overlap`` frames are never linked.

    Returns every cluster that contains at least one of ``points``: existing ones
    first (in the given order, with members added), then new ones.
    """
    track_ids = track_ids or {}
    new_id = new_id or itertools.count().__next__
    pts = sorted(points, key=lambda p: p.sort_key())
    idx = {id(p): i for i, p in enumerate(pts)}
    key_of = [track_ids.get(p, p) for p in pts]
    owner = {}
    for c in existing:
        for m in c.members:
            owner[m] = c

    parent = list(range(len(pts)))
    label = [owner.get(k) for k in key_of]

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri == rj:
            return
        li, lj = label[ri], label[rj]
        if li is not None and lj is not None and li is not lj:
            return
        parent[rj] = ri
        label[ri] = li if li is not None else lj

    # points already in the same existing cluster form one group from the start
    first_of = {}
    for i, k in enumerate(key_of):
        c = owner.get(k)
        if c is not None:
            if id(c) in first_of:
                union(first_of[id(c)], i)
            else:
                first_of[id(c)] = i

    cache = {}
    for p in pts:
        i = idx[id(p)]
        for q in neighbors(p, pts, K):
            j = idx[id(q)]
            pair = (min(i, j), max(i, j))
            if pair not in cache:
                a, b = trajectories[p], trajectories[q]
                cache[pair] = None
                if min(a.end, b.end) - max(a.start, b.start) + 1 >= min_overlap:
                    try:
                        cache[pair] = coherence(a, b, cal, epsilon_den)
                    except (InsufficientOverlap, NotComparable):
                        pass
            c = cache[pair]
            if c is not None and c < t_coherence:
                union(i, j)

    groups: dict[int, list[int]] = {}
    for i in range(len(pts)):
        groups.setdefault(find(i), []).append(i)
    touched, fresh = {}, []
    for root, members in groups.items():
        c = label[root]
        if c is not None:
            c.members.update(key_of[i] for i in members)
            touched[id(c)] = c
        else:
            fresh.append(members)
    out = [c for c in existing if id(c) in touched]
    frame = pts[0].frame_index if pts else 0
    for members in sorted(fresh, key=lambda m: m[0]):
        out.append(Cluster(new_id(), {key_of[i] for i in members},
                           region_id=pts[members[0]].region_id, created_at=frame))
    return out
