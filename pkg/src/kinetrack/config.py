"""Pipeline configuration: TOML in, fully resolved dataclasses out.

Every section and key is optional except the calibration, which needs either
``c2`` or both point pairs. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .calibration import DEFAULT_C1, DEFAULT_C3, PointPair, SceneCalibration, calibrate
from .errors import ConfigError, DegenerateCalibration
from .features import FeatureParams
from .motion import MotionParams
from .tracking import TrackerParams


@dataclass
class CalibrationConfig:
    c1: float = DEFAULT_C1
    c3: float = DEFAULT_C3
    c2: float | None = None
    pair_near: list[float] | None = None
    pair_far: list[float] | None = None

    def resolve(self) -> SceneCalibration:
        try:
            if self.c2 is not None:
                return SceneCalibration(self.c1, float(self.c2), self.c3)
            if self.pair_near is None or self.pair_far is None:
                raise ConfigError("calibration needs c2 or both pair_near and pair_far")
            return calibrate(PointPair.from_list(self.pair_near), PointPair.from_list(self.pair_far),
                             self.c1, self.c3)
        except DegenerateCalibration as exc:
            raise ConfigError(f"calibration: {exc}") from None


@dataclass
class ClusteringConfig:
    k_neighbors: int = 6
    context_frames: int = 5
    t_coherence: float = 1e-4
    epsilon_den: float = 1.0


@dataclass
class TrackingConfig:
    t_feature: float = 0.75
    track_retirement: int = 50
    cluster_retirement: int = 250
    split_min_features: int = 3
    split_confirm_frames: int = 3
    min_cluster_size: int = 3
    min_cluster_motion: float = 1.0
    pending_max_age: int = 15
    adopt_min_frames: int = 3
    claimed_regions_exclusive: bool = True
    max_speed: float = 8.0
    kinetic_tolerance: float = 1.5


@dataclass
class IOConfig:
    input: str = ""
    output: str = "out"
    overlay: bool = False
    dump_regions: bool = False
    dump_keypoints: bool = False


def _section(cls):
    return field(default_factory=cls)


@dataclass
class PipelineConfig:
    calibration: CalibrationConfig = _section(CalibrationConfig)
    motion: MotionParams = _section(MotionParams)
    features: FeatureParams = _section(FeatureParams)
    clustering: ClusteringConfig = _section(ClusteringConfig)
    tracking: TrackingConfig = _section(TrackingConfig)
    io: IOConfig = _section(IOConfig)

    def tracker_params(self) -> TrackerParams:
        return TrackerParams(**dataclasses.asdict(self.clustering), **dataclasses.asdict(self.tracking))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> PipelineConfig:
        sections = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for name, values in data.items():
            if name not in sections:
                raise ConfigError(f"unknown config section [{name}]")
            if not isinstance(values, dict):
                raise ConfigError(f"[{name}] must be a table")
            sec_cls = sections[name].default_factory
            known = {f.name: f for f in dataclasses.fields(sec_cls)}
            for key in values:
                if key not in known:
                    raise ConfigError(f"unknown config key {name}.{key}")
            try:
                kwargs[name] = sec_cls(**values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}]: {exc}") from None
        cfg = cls(**kwargs)
        if base_dir is not None:
            for attr in ("input", "output"):
                p = getattr(cfg.io, attr)
                if p and not Path(p).is_absolute():
                    setattr(cfg.io, attr, str((base_dir / p).resolve()))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.motion.frame_gap < 1:
            raise ConfigError("motion.frame_gap must be >= 1")
        if self.motion.threshold <= 0:
            raise ConfigError("motion.threshold must be positive")
        if self.motion.rectify not in ("before", "after"):
            raise ConfigError("motion.rectify must be 'before' or 'after'")
        if not 0 < self.tracking.t_feature <= 1:
            raise ConfigError("tracking.t_feature must lie in (0, 1]")
        if self.clustering.k_neighbors < 1 or self.clustering.context_frames < 1:
            raise ConfigError("clustering.k_neighbors and clustering.context_frames must be >= 1")
        self.calibration.resolve()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = tomli.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return PipelineConfig.from_dict(data, base_dir=path.parent)
