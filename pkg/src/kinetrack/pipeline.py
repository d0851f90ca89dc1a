"""Frame-sequential driver: motion -> features -> tracking, plus run outputs."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import io
from .calibration import SceneCalibration
from .config import PipelineConfig
from .errors import MissingInput
from .features import describe_all, detect, detection_footprint
from .motion import FrameBuffer, detect_motion_regions, region_union_mask
from .tracking import Tracker

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    frames: int
    clusters: int  # non-retired at the end
    clusters_total: int
    mean_regions_per_frame: float
    mean_region_area_fraction: float
    mean_detector_visit_fraction: float
    max_detector_visit_fraction: float
    seconds: float


class Pipeline:
    """Consumes frames in order; keeps the last ``frame_gap`` frames for differencing."""

    def __init__(self, config: PipelineConfig, cal: SceneCalibration | None = None, hooks=None):
        self.config = config
        self.cal = cal or config.calibration.resolve()
        self.tracker = Tracker(self.cal, config.tracker_params())
        self.hooks = hooks or []
        self._history: list[FrameBuffer] = []
        self.region_counts: list[int] = []
        self.area_fractions: list[float] = []
        self.visit_fractions: list[float] = []

    def feed(self, frame: FrameBuffer):
        k = self.config.motion.frame_gap
        self._history.append(frame)
        self._history = self._history[-(k + 1):]
        regions = []
        if len(self._history) == k + 1:
            regions = detect_motion_regions(frame, self._history[0], self.cal, self.config.motion)
            shape = frame.pixels.shape
            self.region_counts.append(len(regions))
            self.area_fractions.append(float(region_union_mask(regions, shape).mean()))
            self.visit_fractions.append(float(detection_footprint(shape, regions, self.config.features).mean()))
        points = detect(frame, regions, self.config.features)
        features = describe_all(frame, points)
        self.tracker.step(frame.index, regions, features)
        for hook in self.hooks:
            hook(frame, regions, features, self.tracker)

    def report(self, frames: int, seconds: float) -> RunReport:
        t = self.tracker
        return RunReport(
            frames=frames,
            clusters=len(t.clusters),
            clusters_total=len(t.clusters) + len(t.retired),
            mean_regions_per_frame=float(np.mean(self.region_counts)) if self.region_counts else 0.0,
            mean_region_area_fraction=float(np.mean(self.area_fractions)) if self.area_fractions else 0.0,
            mean_detector_visit_fraction=float(np.mean(self.visit_fractions)) if self.visit_fractions else 0.0,
            max_detector_visit_fraction=float(np.max(self.visit_fractions)) if self.visit_fractions else 0.0,
            seconds=seconds,
        )


def process(frames, config: PipelineConfig, cal: SceneCalibration | None = None, hooks=None):
    """Run the pipeline over in-memory frames. Returns ``(pipeline, report)``."""
    start = time.perf_counter()
    pipe = Pipeline(config, cal, hooks)
    n = 0
    for frame in frames:
        pipe.feed(frame)
        n += 1
    return pipe, pipe.report(n, time.perf_counter() - start)


def cluster_color(cluster_id: int) -> tuple[int, int, int]:
    h = hashlib.md5(str(cluster_id).encode()).digest()
    # keep colours away from the grey axis
    rgb = [64 + h[i] % 192 for i in range(3)]
    rgb[h[3] % 3] = 255
    return tuple(rgb)


def draw_overlay(frame: FrameBuffer, tracker: Tracker, tail: int = 10) -> Image.Image:
    gray = np.clip(np.round(frame.pixels * 255), 0, 255).astype(np.uint8)
    im = Image.fromarray(gray).convert("RGB")
    draw = ImageDraw.Draw(im)
    t = frame.index
    for cid in sorted(tracker.clusters):
        color = cluster_color(cid)
        for tid in sorted(tracker.clusters[cid].members):
            tr = tracker.tracks[tid]
            if tr.last_seen != t:
                continue
            pts = [(a.x, a.y) for a in tr.appearances if a.frame > t - tail]
            if len(pts) > 1:
                draw.line(pts, fill=color)
            x, y = pts[-1]
            draw.point((x, y), fill=color)
    return im


def run(config: PipelineConfig) -> RunReport:
    """Process ``config.io.input`` and write every output into ``config.io.output``."""
    cfg = config
    paths = io.list_frames(cfg.io.input)
    if len(paths) < cfg.motion.frame_gap + 1:
        raise MissingInput(f"{cfg.io.input}: need at least {cfg.motion.frame_gap + 1} frames, "
                           f"found {len(paths)}")
    out = Path(cfg.io.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump_json(out / "config.resolved.json")

    hooks = []
    if cfg.io.overlay:
        (out / "overlay").mkdir(exist_ok=True)
        hooks.append(lambda f, r, feats, tr: draw_overlay(f, tr).save(out / "overlay" / f"{f.index:05d}.png"))
    if cfg.io.dump_regions:
        (out / "regions").mkdir(exist_ok=True)

        def dump_regions(f, regions, feats, tr):
            mask = region_union_mask(regions, f.pixels.shape)
            io.write_png(out / "regions" / f"{f.index:05d}.png", mask.astype(np.uint8) * 255)

        hooks.append(dump_regions)
    kp_file = None
    if cfg.io.dump_keypoints:
        kp_file = open(out / "keypoints.csv", "w")
        kp_file.write("frame,x,y,scale,region_id\n")

        def dump_keypoints(f, regions, feats, tr):
            for p, _ in feats:
                kp_file.write(f"{p.frame_index},{p.x:.3f},{p.y:.3f},{p.scale:.4f},{p.region_id}\n")

        hooks.append(dump_keypoints)
    try:
        frames = (io.read_frame(p, i) for i, p in enumerate(paths))
        pipe, report = process(frames, cfg, hooks=hooks)
    finally:
        if kp_file is not None:
            kp_file.close()
    io.write_tracks(out / "tracks.csv", pipe.tracker.sorted_rows())
    io.write_clusters(out / "clusters.jsonl", pipe.tracker.cluster_summaries())
    (out / "report.json").write_text(json.dumps(asdict(report), indent=2, sort_keys=True) + "\n")
    log.info("processed %d frames, %d clusters", report.frames, report.clusters)
    return report


def scenario_config(scenario, **sections) -> PipelineConfig:
    """Default config calibrated from a scenario's reference pairs."""
    from .config import CalibrationConfig

    cfg = PipelineConfig(**sections)
    if scenario.calibration:
        near, far = scenario.calibration
        cfg.calibration = CalibrationConfig(pair_near=list(near), pair_far=list(far))
    return cfg


def run_scenario(scenario, config: PipelineConfig | None = None, seed: int = 0):
    """Render a scenario and track it in memory. Returns ``(pipeline, report, truth)``."""
    from .synth import render

    frames, truth = render(scenario, seed)
    cfg = config or scenario_config(scenario)
    pipe, report = process(frames, cfg)
    return pipe, report, truth
