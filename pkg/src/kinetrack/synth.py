"""Synthetic scenes with scripted textured sprites and exact ground truth.

Scenarios are written in a small line-oriented text format::

    # comment
    name     lone_walker
    size     160 120            # width height
    length   100                # frames
    background flat 50          # or: noise seed=3 cell=3 mean=90 contrast=60
                                # or: tiles cell=8 low=60 high=140
    calibration 0,100,30,100 0,20,14,20   # optional near/far pairs x1,y1,x2,y2
    sprite walker
      shape   rect 20 30        # rect|ellipse width height at 100% scale
      texture seed=7 cell=3 mean=190 contrast=60
      path    30,65@0 130,65@99 # centre keyframes x,y@frame, linear between
      scale   100@0 50@99       # optional percent keyframes
      depth   1                 # larger depth is drawn later (nearer)

Rendering uses integer arithmetic only, so a (scenario, seed) pair produces
the same frames on every platform. The seed offsets every texture seed.
"""

from __future__ import annotations

import csv
import shlex
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidScenario


@dataclass(frozen=True)
class Background:
    kind: str = "flat"  # flat | noise | tiles
    value: int = 50
    seed: int = 0
    cell: int = 4
    mean: int = 90
    contrast: int = 60
    low: int = 60
    high: int = 140


@dataclass(frozen=True)
class Texture:
    seed: int = 0
    cell: int = 3
    mean: int = 180
    contrast: int = 70


@dataclass
class SpriteScript:
    id: str
    width: int
    height: int
    path: list[tuple[int, int, int]]  # (frame, x, y) keyframes
    shape: str = "rect"
    texture: Texture = field(default_factory=Texture)
    scale: list[tuple[int, int]] = field(default_factory=lambda: [(0, 100)])  # (frame, percent)
    depth: int = 0

    def center(self, t: int) -> tuple[int, int]:
        x = _interp(t, [(f, x) for f, x, _ in self.path])
        y = _interp(t, [(f, y) for f, _, y in self.path])
        return x, y

    def size(self, t: int) -> tuple[int, int]:
        pct = _interp(t, self.scale)
        return max(1, (self.width * pct + 50) // 100), max(1, (self.height * pct + 50) // 100)


@dataclass
class Scenario:
    name: str
    width: int
    height: int
    length: int
    background: Background = field(default_factory=Background)
    sprites: list[SpriteScript] = field(default_factory=list)
    calibration: tuple[tuple[int, ...], tuple[int, ...]] | None = None

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InvalidScenario(f"{self.name}: bad size {self.width}x{self.height}")
        if self.length < 2:
            raise InvalidScenario(f"{self.name}: length must be >= 2")
        if self.background.kind not in ("flat", "noise", "tiles"):
            raise InvalidScenario(f"unknown background {self.background.kind!r}")
        seen = set()
        for s in self.sprites:
            if s.id in seen:
                raise InvalidScenario(f"duplicate sprite id {s.id!r}")
            seen.add(s.id)
            if s.shape not in ("rect", "ellipse"):
                raise InvalidScenario(f"sprite {s.id}: unknown shape {s.shape!r}")
            if s.width <= 0 or s.height <= 0:
                raise InvalidScenario(f"sprite {s.id}: non-positive size")
            if not s.path:
                raise InvalidScenario(f"sprite {s.id}: empty path")
            for keys in (s.path, s.scale):
                frames = [k[0] for k in keys]
                if frames != sorted(set(frames)):
                    raise InvalidScenario(f"sprite {s.id}: keyframes must strictly increase")
            if any(p <= 0 for _, p in s.scale):
                raise InvalidScenario(f"sprite {s.id}: scale must be positive")


@dataclass(frozen=True)
class TruthRow:
    frame: int
    sprite_id: str
    bbox: tuple[int, int, int, int]  # inclusive, unclipped
    visibility: float


@dataclass
class GroundTruth:
    rows: list[TruthRow] = field(default_factory=list)

    def at(self, frame: int) -> dict[str, TruthRow]:
        return {r.sprite_id: r for r in self.rows if r.frame == frame}

    def sprite(self, sprite_id: str) -> list[TruthRow]:
        return [r for r in self.rows if r.sprite_id == sprite_id]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "sprite_id", "x_min", "y_min", "x_max", "y_max", "visibility"])
            for r in self.rows:
                w.writerow([r.frame, r.sprite_id, *r.bbox, f"{r.visibility:.6f}"])


def _interp(t: int, keys) -> int:
    """Piecewise-linear integer interpolation, rounding half up, clamped at the ends."""
    if t <= keys[0][0]:
        return keys[0][1]
    for (t0, v0), (t1, v1) in zip(keys, keys[1:]):
        if t <= t1:
            num = (v1 - v0) * (t - t0)
            den = t1 - t0
            return v0 + (2 * num + den) // (2 * den)
    return keys[-1][1]


def _blocks(rng, shape, cell, lo, hi) -> np.ndarray:
    h, w = shape
    nb = (-(-h // cell), -(-w // cell))
    vals = rng.integers(lo, hi + 1, size=nb, dtype=np.int64)
    return np.repeat(np.repeat(vals, cell, axis=0), cell, axis=1)[:h, :w]


def _background(sc: Scenario, seed: int) -> np.ndarray:
    bg = sc.background
    shape = (sc.height, sc.width)
    if bg.kind == "flat":
        return np.full(shape, bg.value, dtype=np.int64)
    if bg.kind == "noise":
        rng = np.random.default_rng(bg.seed + seed)
        return _blocks(rng, shape, bg.cell, bg.mean - bg.contrast, bg.mean + bg.contrast)
    yy, xx = np.indices(shape)
    checker = ((yy // bg.cell) + (xx // bg.cell)) % 2
    return np.where(checker == 1, bg.high, bg.low).astype(np.int64)


def sprite_texture(sprite: SpriteScript, seed: int = 0) -> np.ndarray:
    tx = sprite.texture
    rng = np.random.default_rng(tx.seed + seed)
    return _blocks(rng, (sprite.height, sprite.width), tx.cell,
                   tx.mean - tx.contrast, tx.mean + tx.contrast)


def _shape_mask(shape: str, w: int, h: int) -> np.ndarray:
    if shape == "rect":
        return np.ones((h, w), dtype=bool)
    yy, xx = np.indices((h, w))
    # (2i+1-h)^2 w^2 + (2j+1-w)^2 h^2 <= (w h)^2, all integer
    return (2 * yy + 1 - h) ** 2 * w * w + (2 * xx + 1 - w) ** 2 * h * h <= (w * h) ** 2


def render(scenario: Scenario, seed: int = 0):
    """Render every frame; returns ``(frames, truth)`` with frames as FrameBuffers."""
    from .motion import FrameBuffer

    raw, truth = render_raw(scenario, seed)
    frames = [FrameBuffer(img / 255.0, t) for t, img in enumerate(raw)]
    return frames, truth


def render_raw(scenario: Scenario, seed: int = 0):
    """Render frames as uint8 arrays (the bit-exact form)."""
    scenario.validate()
    H, W = scenario.height, scenario.width
    base = _background(scenario, seed)
    order = sorted(range(len(scenario.sprites)), key=lambda i: (scenario.sprites[i].depth, i))
    textures = {i: sprite_texture(scenario.sprites[i], seed) for i in order}
    frames, truth = [], GroundTruth()
    for t in range(scenario.length):
        img = base.copy()
        owner = np.full((H, W), -1, dtype=np.int64)
        placed = {}
        for i in order:
            sp = scenario.sprites[i]
            w, h = sp.size(t)
            cx, cy = sp.center(t)
            left, top = cx - w // 2, cy - h // 2
            tex = textures[i]
            rows = (np.arange(h) * sp.height) // h
            cols = (np.arange(w) * sp.width) // w
            patch = tex[rows][:, cols]
            mask = _shape_mask(sp.shape, w, h)
            placed[i] = (left, top, w, h, int(mask.sum()))
            y0, y1 = max(top, 0), min(top + h, H)
            x0, x1 = max(left, 0), min(left + w, W)
            if y0 >= y1 or x0 >= x1:
                continue
            sub_mask = mask[y0 - top:y1 - top, x0 - left:x1 - left]
            sub_patch = patch[y0 - top:y1 - top, x0 - left:x1 - left]
            img[y0:y1, x0:x1][sub_mask] = sub_patch[sub_mask]
            owner[y0:y1, x0:x1][sub_mask] = i
        for i, sp in enumerate(scenario.sprites):
            left, top, w, h, total = placed[i]
            visible = int(np.count_nonzero(owner == i))
            truth.rows.append(TruthRow(t, sp.id, (left, top, left + w - 1, top + h - 1), visible / total))
        frames.append(np.clip(img, 0, 255).astype(np.uint8))
    return frames, truth


# -- text format -------------------------------------------------------------

def _kv(tokens, cls, context):
    kwargs = {}
    for tok in tokens:
        if "=" not in tok:
            raise InvalidScenario(f"{context}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        kwargs[k] = int(v)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidScenario(f"{context}: {exc}") from None


def _keyframes(tokens, context, arity):
    out = []
    for tok in tokens:
        try:
            vals, frame = tok.split("@")
            nums = [int(v) for v in vals.split(",")]
            if len(nums) != arity:
                raise ValueError
            out.append((int(frame), *nums))
        except ValueError:
            raise InvalidScenario(f"{context}: bad keyframe {tok!r}") from None
    return out


def parse_scenario(text: str) -> Scenario:
    header = {"name": "scenario", "background": Background(), "calibration": None}
    sprites = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = shlex.split(line)
        ctx = f"line {lineno}"
        try:
            if key == "sprite":
                current = {"id": args[0]}
                sprites.append(current)
            elif current is not None and key in ("shape", "texture", "path", "scale", "depth"):
                if key == "shape":
                    current["shape"] = args[0]
                    current["width"], current["height"] = int(args[1]), int(args[2])
                elif key == "texture":
                    current["texture"] = _kv(args, Texture, ctx)
                elif key == "path":
                    current["path"] = _keyframes(args, ctx, 2)
                elif key == "scale":
                    current["scale"] = _keyframes(args, ctx, 1)
                else:
                    current["depth"] = int(args[0])
            elif key == "name":
                header["name"] = args[0]
            elif key == "size":
                header["width"], header["height"] = int(args[0]), int(args[1])
            elif key == "length":
                header["length"] = int(args[0])
            elif key == "background":
                kind, rest = args[0], args[1:]
                if kind == "flat":
                    header["background"] = Background("flat", value=int(rest[0]))
                else:
                    bg = _kv(rest, Background, ctx)
                    header["background"] = Background(**{**bg.__dict__, "kind": kind})
            elif key == "calibration":
                header["calibration"] = tuple(tuple(int(v) for v in a.split(",")) for a in args[:2])
            else:
                raise InvalidScenario(f"{ctx}: unknown directive {key!r}")
        except (IndexError, ValueError) as exc:
            raise InvalidScenario(f"{ctx}: malformed {key!r} ({exc})") from None
    for key in ("width", "length"):
        if key not in header:
            raise InvalidScenario(f"missing {'size' if key == 'width' else key} directive")
    built = []
    for s in sprites:
        if "width" not in s or "path" not in s:
            raise InvalidScenario(f"sprite {s['id']}: needs shape and path")
        built.append(SpriteScript(**s))
    sc = Scenario(sprites=built, **header)
    sc.validate()
    return sc


def load_scenario(path_or_name) -> Scenario:
    """Parse a scenario file, or a library scenario by name."""
    p = Path(str(path_or_name))
    if p.exists():
        return parse_scenario(p.read_text())
    lib = scenario_library()
    if str(path_or_name) in lib:
        return lib[str(path_or_name)]
    raise InvalidScenario(f"no scenario file or library entry named {path_or_name!r}")


def scenario_library() -> dict[str, Scenario]:
    out = {}
    for entry in sorted(resources.files("kinetrack.scenarios").iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".scn"):
            sc = parse_scenario(entry.read_text())
            out[sc.name] = sc
    return out
