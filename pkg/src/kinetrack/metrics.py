"""Score a track CSV against synthetic ground truth.

Per sprite, only frames where its visibility exceeds ``min_visibility`` are
evaluated. In each such frame the candidates are the clusters whose matched
centroid lies inside the sprite's bbox; the best-matched cluster is the candidate
with the most matched track points inside the bbox, ties going to the centroid
nearer the bbox centre, then the lower id. Requiring the centroid (not just some
points) inside keeps an occluder's features from claiming a partly hidden sprite.

- identity switches: changes of best-matched cluster id between evaluated frames
- fragmentation: number of covered runs minus one (gaps in coverage)
- coverage: fraction of evaluated frames where some matched cluster centroid lies
  inside the bbox
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass

from . import io
from .errors import SchemaMismatch


@dataclass
class SpriteMetrics:
    sprite_id: str
    frames_evaluated: int
    frames_covered: int
    coverage: float
    identity_switches: int
    fragmentation: int
    clusters: list[int]  # best-matched cluster ids in order of first appearance


def _inside(bbox, x, y) -> bool:
    return bbox[0] <= x <= bbox[2] and bbox[1] <= y <= bbox[3]


def _parse_tracks(rows):
    points = defaultdict(lambda: defaultdict(list))  # frame -> cluster -> [(x, y)]
    centroids = defaultdict(dict)  # frame -> cluster -> (x, y), matched only
    try:
        for r in rows:
            if int(r["matched"]) != 1:
                continue
            f, c, x, y = int(r["frame"]), int(r["cluster_id"]), float(r["x"]), float(r["y"])
            if r["track_id"] == "":
                centroids[f][c] = (x, y)
            else:
                points[f][c].append((x, y))
    except (KeyError, ValueError) as exc:
        raise SchemaMismatch(f"malformed track row: {exc}") from None
    return points, centroids


def _parse_truth(rows):
    truth = defaultdict(dict)  # sprite -> frame -> (bbox, visibility)
    try:
        for r in rows:
            bbox = tuple(int(r[k]) for k in ("x_min", "y_min", "x_max", "y_max"))
            truth[r["sprite_id"]][int(r["frame"])] = (bbox, float(r["visibility"]))
    except (KeyError, ValueError) as exc:
        raise SchemaMismatch(f"malformed truth row: {exc}") from None
    return truth


def best_cluster(bbox, points, centroids):
    cx, cy = (bbox[0] + bbox[2]) / 2, (bbox[1] + bbox[3]) / 2
    cands = []
    for c, cen in centroids.items():
        if not _inside(bbox, *cen):
            continue
        n = sum(_inside(bbox, x, y) for x, y in points.get(c, ()))
        cands.append((-n, (cen[0] - cx) ** 2 + (cen[1] - cy) ** 2, c))
    return min(cands)[2] if cands else None


def evaluate(track_rows, truth_rows, frames: range | None = None, min_visibility: float = 0.5):
    points, centroids = _parse_tracks(track_rows)
    truth = _parse_truth(truth_rows)
    out = {}
    for sid in sorted(truth):
        evaluated = covered = switches = runs = 0
        prev_best = None
        prev_covered = False
        order: list[int] = []
        for f in sorted(truth[sid]):
            bbox, vis = truth[sid][f]
            if vis <= min_visibility or (frames is not None and f not in frames):
                continue
            evaluated += 1
            cen = centroids.get(f, {})
            is_cov = any(_inside(bbox, x, y) for x, y in cen.values())
            covered += is_cov
            if is_cov and not prev_covered:
                runs += 1
            prev_covered = is_cov
            best = best_cluster(bbox, points.get(f, {}), cen)
            if best is not None:
                if prev_best is not None and best != prev_best:
                    switches += 1
                prev_best = best
                if best not in order:
                    order.append(best)
        out[sid] = SpriteMetrics(sid, evaluated, covered, covered / evaluated if evaluated else 0.0,
                                 switches, max(runs - 1, 0), order)
    return out


def evaluate_files(tracks_csv, truth_csv, frames: range | None = None):
    return evaluate(io.read_csv(tracks_csv, io.TRACK_HEADER), io.read_csv(truth_csv, io.TRUTH_HEADER), frames)


def tracks_as_rows(rows) -> list[dict]:
    """Convert in-memory TrackRows into the dict form read from CSV."""
    return [{"frame": str(r.frame), "cluster_id": str(r.cluster_id),
             "track_id": "" if r.track_id is None else str(r.track_id),
             "x": repr(r.x), "y": repr(r.y), "matched": str(r.matched)} for r in rows]


def truth_as_rows(truth) -> list[dict]:
    return [{"frame": str(r.frame), "sprite_id": r.sprite_id,
             "x_min": str(r.bbox[0]), "y_min": str(r.bbox[1]), "x_max": str(r.bbox[2]), "y_max": str(r.bbox[3]),
             "visibility": repr(r.visibility)} for r in truth.rows]


def report(metrics: dict) -> dict:
    return {sid: asdict(m) for sid, m in metrics.items()}
