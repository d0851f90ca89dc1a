"""Frame-to-frame propagation of feature tracks and their clusters.

A cluster is an object's appearance model: every feature track ever added to it
stays a member, with its full appearance history, even after the feature stops
being seen. Each frame, a cluster's live tracks are matched by descriptor
similarity inside a search area made of the cluster's last motion region plus
every new region overlapping it. Clusters follow the region most of their matched
features land in, split when their features settle into separate, kinetically
incoherent regions, and are never merged.

Newly detected features are first followed as *pending* tracks for a few frames
so their trajectories can be compared with their neighbours'; only then are they
clustered and become part of a model.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .calibration import SceneCalibration
from .clustering import Cluster, Trajectory, cluster_region, coherence
from .errors import InsufficientOverlap, NotComparable
from .features import Descriptor, InterestPoint, similarity, similarity_matrix
from .motion import MotionRegion

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Appearance:
    frame: int
    x: float
    y: float
    descriptor: Descriptor


@dataclass(eq=False)
class FeatureTrack:
    id: int
    appearances: list[Appearance]
    cluster_id: int | None = None
    region: MotionRegion | None = None
    retired: bool = False

    def __post_init__(self):
        if not self.appearances:
            raise ValueError("a track starts with one appearance")

    def append(self, app: Appearance) -> None:
        if app.frame <= self.last_seen:
            raise ValueError(f"track {self.id}: appearance at {app.frame} after {self.last_seen}")
        self.appearances.append(app)

    @property
    def last_seen(self) -> int:
        return self.appearances[-1].frame

    @property
    def first_seen(self) -> int:
        return self.appearances[0].frame

    @property
    def lifetime(self) -> int:
        return self.last_seen - self.first_seen + 1

    @property
    def latest(self) -> Appearance:
        return self.appearances[-1]

    def position_at(self, frame: int):
        for a in reversed(self.appearances):
            if a.frame == frame:
                return (a.x, a.y)
            if a.frame < frame:
                return None
        return None

    def recent_trajectory(self, lo: int) -> Trajectory:
        """The contiguous run of positions ending at ``last_seen``, from ``lo`` on."""
        run = [self.appearances[-1]]
        for a in reversed(self.appearances[:-1]):
            if a.frame != run[-1].frame - 1 or a.frame < lo:
                break
            run.append(a)
        run.reverse()
        return Trajectory(run[0].frame, [(a.x, a.y) for a in run])


@dataclass
class SearchArea:
    """Prior footprint united with every next-frame region that intersects it."""

    frame_index: int
    prior: MotionRegion
    regions: list[MotionRegion]

    @property
    def region_ids(self) -> set[str]:
        return {r.id for r in self.regions}

    def pixels(self) -> set[tuple[int, int]]:
        out = self.prior.pixels()
        for r in self.regions:
            out |= r.pixels()
        return out

    def contains(self, point: InterestPoint) -> bool:
        if point.region_id in self.region_ids:
            return True
        x, y = int(round(point.x)), int(round(point.y))
        return self.prior.contains(x, y) or any(r.contains(x, y) for r in self.regions)


def build_search_area(prior_region: MotionRegion, next_regions, frame_index=None) -> SearchArea:
    hits = [r for r in next_regions if r.intersects(prior_region)]
    if frame_index is None:
        frame_index = next_regions[0].frame_index if next_regions else prior_region.frame_index + 1
    return SearchArea(frame_index, prior_region, hits)


NO_MATCH = None


def match_feature(track: FeatureTrack, candidates, t_feature: float):
    """Best-cosine candidate ``(point, descriptor)`` for ``track``, or ``NO_MATCH``.

    Ties on similarity go to the smaller displacement from the track's last
    position, then to (y, x).
    """
    last = track.latest
    best, best_key = NO_MATCH, None
    for point, desc in candidates:
        s = similarity(last.descriptor, desc)
        if s < t_feature:
            continue
        key = (-s, (point.x - last.x) ** 2 + (point.y - last.y) ** 2, point.y, point.x)
        if best_key is None or key < best_key:
            best, best_key = (point, desc), key
    return best


@dataclass(frozen=True)
class TrackerParams:
    t_feature: float = 0.75
    track_retirement: int = 50
    cluster_retirement: int = 250
    split_min_features: int = 3
    split_confirm_frames: int = 3
    k_neighbors: int = 6
    context_frames: int = 5
    t_coherence: float = 1e-4
    epsilon_den: float = 1.0
    min_cluster_size: int = 3
    min_cluster_motion: float = 1.0
    pending_max_age: int = 15
    adopt_min_frames: int = 3
    claimed_regions_exclusive: bool = True
    max_speed: float = 8.0
    kinetic_tolerance: float = 1.5


@dataclass
class TrackRow:
    frame: int
    cluster_id: int
    track_id: int | None
    x: float
    y: float
    matched: int


def _digest(desc: Descriptor) -> str:
    return hashlib.sha1(desc.values.tobytes()).hexdigest()[:16]


class Tracker:
    """Single-owner tracker state, advanced one frame at a time with :meth:`step`."""

    def __init__(self, cal: SceneCalibration, params: TrackerParams = TrackerParams()):
        self.cal = cal
        self.params = params
        self.frame_index: int | None = None
        self.tracks: dict[int, FeatureTrack] = {}
        self.pending: dict[int, FeatureTrack] = {}
        self.clusters: dict[int, Cluster] = {}
        self.retired: dict[int, Cluster] = {}
        self.rows: list[TrackRow] = []
        self.audit: list[tuple] = []
        self.match_log: list[tuple] = []
        self._track_ids = itertools.count()
        self._cluster_ids = itertools.count()
        self._centroids: dict[int, tuple[float, float]] = {}

    # -- public views -------------------------------------------------------

    @property
    def active_clusters(self) -> list[Cluster]:
        return [self.clusters[k] for k in sorted(self.clusters)]

    def cluster_tracks(self, cluster_id: int) -> list[FeatureTrack]:
        c = self.clusters.get(cluster_id) or self.retired[cluster_id]
        return [self.tracks[t] for t in sorted(c.members)]

    # -- one frame ----------------------------------------------------------

    def step(self, frame_index: int, regions: list[MotionRegion], features) -> Tracker:
        """Advance to ``frame_index`` given its motion regions and described features."""
        if self.frame_index is not None and frame_index <= self.frame_index:
            raise ValueError(f"frames must advance ({frame_index} after {self.frame_index})")
        self.frame_index = t = frame_index
        p = self.params
        region_by_id = {r.id: r for r in regions}
        feats = list(features)

        matches = self._assign(t, regions, feats)
        matched_by_cluster: dict[int, list[tuple[FeatureTrack, InterestPoint]]] = {}
        matched_pending = []
        used = set()
        for track, (point, desc) in matches:
            used.add(id(point))
            track.append(Appearance(t, point.x, point.y, desc))
            track.region = region_by_id.get(point.region_id, track.region)
            if track.cluster_id is None:
                matched_pending.append((track, point))
            else:
                self._log_append(track)
                matched_by_cluster.setdefault(track.cluster_id, []).append((track, point))

        for cid in sorted(self.clusters):
            self._reassociate(self.clusters[cid], matched_by_cluster.get(cid, []), region_by_id, t)
        for cid in sorted(matched_by_cluster):
            if cid in self.clusters:
                self._maybe_split(self.clusters[cid], matched_by_cluster[cid], region_by_id, t)

        # pending tracks must be followed every frame; anything unmatched lapses
        for tid in [k for k, tr in self.pending.items() if tr.last_seen != t]:
            del self.pending[tid]
        for point, desc in feats:
            if id(point) in used or point.region_id not in region_by_id:
                continue
            tid = next(self._track_ids)
            self.pending[tid] = FeatureTrack(tid, [Appearance(t, point.x, point.y, desc)],
                                             region=region_by_id[point.region_id])

        self._promote(t, matched_by_cluster, matched_pending)
        self._retire(t)
        self._emit(t)
        self.audit.append(("clusters", t, len(self.clusters), len(self.retired)))
        return self

    # -- matching -----------------------------------------------------------

    def _assign(self, t, regions, feats):
        p = self.params
        matchers: list[tuple[FeatureTrack, tuple[SearchArea, ...]]] = []
        areas: dict[str, SearchArea] = {}

        def area_for(region):
            if region.id not in areas:
                areas[region.id] = build_search_area(region, regions, t)
            return areas[region.id]

        # a track searches its cluster's area and the area of the region it was last seen in
        for cid in sorted(self.clusters):
            c = self.clusters[cid]
            for tid in sorted(c.members):
                tr = self.tracks[tid]
                if tr.retired:
                    continue
                regs = {r.id: r for r in (c.region, tr.region) if r is not None}
                matchers.append((tr, tuple(area_for(r) for r in regs.values())))
        for tid in sorted(self.pending):
            tr = self.pending[tid]
            matchers.append((tr, (area_for(tr.region),)))
        if not matchers or not feats:
            return []

        tdesc = np.stack([tr.latest.descriptor.values for tr, _ in matchers])
        fdesc = np.stack([d.values for _, d in feats])
        sim = similarity_matrix(tdesc, fdesc)
        fx = np.array([pt.x for pt, _ in feats])
        fy = np.array([pt.y for pt, _ in feats])
        inside_cache: dict[int, np.ndarray] = {}
        pairs = []
        for i, (tr, own) in enumerate(matchers):
            inside = np.zeros(len(feats), dtype=bool)
            for area in own:
                if id(area) not in inside_cache:
                    inside_cache[id(area)] = np.array([area.contains(pt) for pt, _ in feats])
                inside |= inside_cache[id(area)]
            gap = t - tr.last_seen
            d2 = (fx - tr.latest.x) ** 2 + (fy - tr.latest.y) ** 2
            ok = inside & (sim[i] >= p.t_feature) & (d2 <= (p.max_speed * gap) ** 2)
            for j in np.nonzero(ok)[0]:
                pairs.append((-sim[i, j], d2[j], fy[j], fx[j], tr.id, i, j))
        pairs.sort()
        taken_t, taken_f, out = set(), set(), []
        for *_, i, j in pairs:
            if i in taken_t or j in taken_f:
                continue
            taken_t.add(i)
            taken_f.add(j)
            out.append((i, j))

        # a cluster's matches must move coherently: drop matches lacking kinetic support
        by_cluster: dict[int, list[tuple[int, int]]] = {}
        for i, j in out:
            cid = matchers[i][0].cluster_id
            if cid is not None:
                by_cluster.setdefault(cid, []).append((i, j))
        rejected = set()
        for cid, group in by_cluster.items():
            if len(group) < 3:
                continue
            disp = np.array([[fx[j] - matchers[i][0].latest.x, fy[j] - matchers[i][0].latest.y]
                             for i, j in group])
            gaps = np.array([t - matchers[i][0].last_seen for i, _ in group], dtype=float)
            vel = disp / gaps[:, None]
            # displacement of i predicted by j's velocity over i's own gap
            pred = vel[None, :, :] * gaps[:, None, None]
            err = np.hypot(disp[:, None, 0] - pred[..., 0], disp[:, None, 1] - pred[..., 1])
            support = (err <= p.kinetic_tolerance).sum(axis=1) - 1
            for (i, j), s in zip(group, support):
                if s < 2:
                    rejected.add((i, j))
        result = []
        for i, j in out:
            if (i, j) in rejected:
                continue
            tr = matchers[i][0]
            self.match_log.append((t, tr.id, feats[j][0], matchers[i][1]))
            result.append((tr, feats[j]))
        return result

    # -- cluster maintenance ------------------------------------------------

    def _reassociate(self, c: Cluster, matched, region_by_id, t):
        if not matched:
            c.stale = True
            return
        counts: dict[str, int] = {}
        for _, pt in matched:
            if pt.region_id in region_by_id:
                counts[pt.region_id] = counts.get(pt.region_id, 0) + 1
        if not counts:
            return

        def rank(rid):
            overlap = c.region.overlap_area(region_by_id[rid]) if c.region is not None else 0
            return (-counts[rid], -overlap, rid)

        best = min(counts, key=rank)
        c.region = region_by_id[best]
        c.region_id = best
        c.stale = False
        c.last_matched = t

    def _group_coherence(self, a_tracks, b_tracks, t) -> float:
        lo = t - self.params.context_frames
        vals = []
        for ta in a_tracks:
            tja = ta.recent_trajectory(lo)
            for tb in b_tracks:
                try:
                    vals.append(coherence(tja, tb.recent_trajectory(lo), self.cal, self.params.epsilon_den))
                except (InsufficientOverlap, NotComparable):
                    continue
        return float(np.median(vals)) if vals else 0.0

    def _maybe_split(self, c: Cluster, matched, region_by_id, t):
        p = self.params
        groups: dict[str, list[FeatureTrack]] = {}
        for tr, pt in matched:
            if pt.region_id in region_by_id:
                groups.setdefault(pt.region_id, []).append(tr)
        big = {rid: g for rid, g in groups.items() if len(g) >= p.split_min_features}
        if len(big) < 2:
            c.split_streak = 0
            return
        keep = c.region_id if c.region_id in big else max(big, key=lambda r: (len(big[r]), r))
        incoherent = all(self._group_coherence(big[keep], g, t) > p.t_coherence
                         for rid, g in big.items() if rid != keep)
        c.split_streak = c.split_streak + 1 if incoherent else 0
        if c.split_streak < p.split_confirm_frames:
            return
        c.split_streak = 0
        matched_ids = {tr.id for g in big.values() for tr in g}
        children = []
        for rid in sorted(r for r in big if r != keep):
            child = Cluster(next(self._cluster_ids), {tr.id for tr in big[rid]}, region_id=rid,
                            created_at=t, region=region_by_id[rid], parent=c.id, last_matched=t)
            children.append(child)
        # unmatched history goes to whichever side its members sat closest to when last seen
        sides = [(c, big[keep])] + [(ch, big[ch.region_id]) for ch in children]
        for tid in sorted(c.members - matched_ids):
            tr = self.tracks[tid]
            if any(tid in ch.members for ch in children):
                continue
            best, best_d = c, None
            for owner, g in sides:
                for other in g:
                    pos = other.position_at(tr.last_seen)
                    if pos is None:
                        continue
                    d = (pos[0] - tr.latest.x) ** 2 + (pos[1] - tr.latest.y) ** 2
                    if best_d is None or d < best_d:
                        best, best_d = owner, d
            if best is not c:
                best.members.add(tid)
        for ch in children:
            c.members -= ch.members
            for tid in ch.members:
                self.tracks[tid].cluster_id = ch.id
            c.children.append(ch.id)
            self.clusters[ch.id] = ch
            self.audit.append(("split", t, c.id, ch.id))
            log.debug("frame %d: cluster %d split off %d", t, c.id, ch.id)

    def _promote(self, t, matched_by_cluster, matched_pending):
        p = self.params
        # joining an existing cluster needs less history than founding a new one
        ready = [(tr, None) for tr, _ in matched_pending if len(tr.appearances) >= p.adopt_min_frames]
        if not ready:
            return
        by_region: dict[str, list] = {}
        point_of = {tr.id: pt for tr, pt in matched_pending}
        for tr, _ in ready:
            by_region.setdefault(point_of[tr.id].region_id, []).append(tr)
        lo = t - 2 * p.context_frames
        for rid in sorted(by_region):
            pend = by_region[rid]
            residents = [(tr, pt) for g in matched_by_cluster.values() for tr, pt in g
                         if pt.region_id == rid and tr.cluster_id in self.clusters]
            region = pend[0].region
            sharing = {c.id for c in self.clusters.values() if c.region is not None and c.region.intersects(region)}
            sharing |= {tr.cluster_id for tr, _ in residents}
            if len(sharing) > 1:
                # a region shared by several clusters needs full context to tell them apart
                pend = [tr for tr in pend if len(tr.appearances) >= p.context_frames + 1]
                if not pend:
                    continue
            points, traj, ids = [], {}, {}
            for tr in pend:
                pt = point_of[tr.id]
                points.append(pt)
                traj[pt], ids[pt] = tr.recent_trajectory(lo), ("pending", tr.id)
            existing = {}
            for tr, pt in residents:
                points.append(pt)
                traj[pt], ids[pt] = tr.recent_trajectory(lo), ("track", tr.id)
                c = self.clusters[tr.cluster_id]
                if c.id not in existing:
                    existing[c.id] = Cluster(c.id, set())
                existing[c.id].members.add(("track", tr.id))
            result = cluster_region(points, traj, self.cal, p.k_neighbors, p.t_coherence,
                                    existing=[existing[k] for k in sorted(existing)], track_ids=ids,
                                    epsilon_den=p.epsilon_den, min_overlap=p.adopt_min_frames)
            for group in result:
                new_ids = sorted(tid for kind, tid in group.members if kind == "pending")
                if not new_ids:
                    continue
                if existing.get(group.id) is group:
                    self._adopt(self.clusters[group.id], new_ids)
                    continue
                new_ids = [k for k in new_ids if len(self.pending[k].appearances) >= p.context_frames + 1]
                # a region already claimed by a cluster founds no new ones; its
                # unexplained features wait for that cluster's tracks to vouch for them
                if sharing and p.claimed_regions_exclusive:
                    continue
                if len(new_ids) < p.min_cluster_size or self._motion(new_ids) < p.min_cluster_motion:
                    continue
                tracks = [self.pending[k] for k in new_ids]
                c = Cluster(next(self._cluster_ids), set(), region_id=rid,
                            created_at=min(tr.first_seen for tr in tracks),
                            region=tracks[0].region, last_matched=t)
                self.clusters[c.id] = c
                self.audit.append(("create", t, c.id))
                self._adopt(c, new_ids)
                self._backfill_centroids(c, t)

        stale = [k for k, tr in self.pending.items() if t - tr.first_seen >= p.pending_max_age]
        for k in stale:
            del self.pending[k]

    def _motion(self, pending_ids) -> float:
        disp = [np.hypot(tr.latest.x - tr.appearances[0].x, tr.latest.y - tr.appearances[0].y)
                for tr in (self.pending[k] for k in pending_ids)]
        return float(np.mean(disp))

    def _adopt(self, c: Cluster, pending_ids):
        for k in pending_ids:
            tr = self.pending.pop(k)
            tr.cluster_id = c.id
            self.tracks[tr.id] = tr
            c.members.add(tr.id)
            for i in range(len(tr.appearances)):
                self._log_append(tr, i)
            for a in tr.appearances[:-1]:
                self.rows.append(TrackRow(a.frame, c.id, tr.id, a.x, a.y, 1))
            # current-frame row is emitted by _emit

    def _backfill_centroids(self, c: Cluster, t):
        """Centroid rows for the frames a new cluster's tracks existed before promotion."""
        by_frame: dict[int, list[Appearance]] = {}
        for tid in sorted(c.members):
            for a in self.tracks[tid].appearances:
                if a.frame < t:
                    by_frame.setdefault(a.frame, []).append(a)
        for f in sorted(by_frame):
            apps = by_frame[f]
            x = float(np.mean([a.x for a in apps]))
            y = float(np.mean([a.y for a in apps]))
            self.rows.append(TrackRow(f, c.id, None, x, y, 1))

    def _retire(self, t):
        p = self.params
        for tr in self.tracks.values():
            if not tr.retired and t - tr.last_seen > p.track_retirement:
                tr.retired = True
        for cid in sorted(self.clusters):
            c = self.clusters[cid]
            idle = t - (c.last_matched if c.last_matched is not None else c.created_at)
            if c.stale and idle >= p.cluster_retirement and all(self.tracks[m].retired for m in c.members):
                c.retired_at = t
                self.retired[cid] = self.clusters.pop(cid)
                self.audit.append(("retire", t, cid))

    def _emit(self, t):
        for cid in sorted(self.clusters):
            c = self.clusters[cid]
            pts = [(tr.latest.x, tr.latest.y, tr.id) for tr in (self.tracks[m] for m in sorted(c.members))
                   if tr.last_seen == t]
            for x, y, tid in pts:
                self.rows.append(TrackRow(t, cid, tid, x, y, 1))
            if pts:
                self._centroids[cid] = (float(np.mean([q[0] for q in pts])), float(np.mean([q[1] for q in pts])))
            if cid in self._centroids:
                x, y = self._centroids[cid]
                self.rows.append(TrackRow(t, cid, None, x, y, int(bool(pts))))

    def _log_append(self, tr: FeatureTrack, i: int = -1):
        a = tr.appearances[i]
        self.audit.append(("append", tr.id, a.frame, a.x, a.y, _digest(a.descriptor)))

    # -- outputs ------------------------------------------------------------

    def sorted_rows(self) -> list[TrackRow]:
        return sorted(self.rows, key=lambda r: (r.frame, r.cluster_id, -1 if r.track_id is None else r.track_id))

    def cluster_summaries(self) -> list[dict]:
        out = []
        for cid in sorted(set(self.clusters) | set(self.retired)):
            c = self.clusters.get(cid) or self.retired[cid]
            out.append({
                "cluster_id": cid,
                "created_at": c.created_at,
                "retired_at": c.retired_at,
                "member_count": len(c.members),
                "parent": c.parent,
                "children": list(c.children),
            })
        return out
