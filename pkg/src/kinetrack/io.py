"""Frame sequences and the track / cluster file formats.

Track CSV, one row per (cluster, frame) and per (matched track, frame)::

    frame,cluster_id,track_id,x,y,matched

Cluster rows leave ``track_id`` empty and carry the centroid of the cluster's
matched features (the last known centroid, with ``matched=0``, when none
matched). Track rows always have ``matched=1``.

Cluster summary, JSON lines, one object per cluster with keys ``cluster_id``,
``created_at``, ``retired_at`` (null while alive), ``member_count``, ``parent``
(null unless split off another cluster) and ``children``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MissingInput, UnreadableFrame
from .motion import FrameBuffer

FRAME_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")
TRACK_HEADER = ["frame", "cluster_id", "track_id", "x", "y", "matched"]
TRUTH_HEADER = ["frame", "sprite_id", "x_min", "y_min", "x_max", "y_max", "visibility"]


def list_frames(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise MissingInput(f"input directory {d} does not exist")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


def to_gray(arr: np.ndarray) -> np.ndarray:
    """Scale to [0, 1] and average colour channels (alpha dropped)."""
    a = np.asarray(arr)
    peak = float(np.iinfo(a.dtype).max) if np.issubdtype(a.dtype, np.integer) else 1.0
    a = a.astype(float) / peak
    if a.ndim == 3:
        a = a[..., :3].mean(axis=2)
    return np.clip(a, 0.0, 1.0)


def read_frame(path, index: int) -> FrameBuffer:
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise UnreadableFrame(index, path, str(exc)) from None
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise UnreadableFrame(index, path, f"unsupported shape {arr.shape}")
    return FrameBuffer(to_gray(arr), index)


def iter_frames(directory):
    for i, p in enumerate(list_frames(directory)):
        yield read_frame(p, i)


def write_png(path, gray: np.ndarray) -> None:
    a = np.asarray(gray)
    if a.dtype != np.uint8:
        a = np.clip(np.round(a * 255), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)


def write_tracks(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_HEADER)
        for r in rows:
            w.writerow([r.frame, r.cluster_id, "" if r.track_id is None else r.track_id,
                        f"{r.x:.3f}", f"{r.y:.3f}", r.matched])


def write_clusters(path, summaries) -> None:
    with open(path, "w") as fh:
        for s in summaries:
            fh.write(json.dumps(s, sort_keys=True) + "\n")


def read_csv(path, header) -> list[dict]:
    from .errors import SchemaMismatch

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != header:
            raise SchemaMismatch(f"{path}: expected columns {header}, got {reader.fieldnames}")
        return list(reader)
