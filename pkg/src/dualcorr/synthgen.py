"""Synthetic moving-shapes videos paired with templated referring expressions.

A scene holds one referent and a few distractors, each a filled square,
circle or triangle moving on a straight line. The query names the referent
first and one distractor as context. Optional stress events (partial
occlusion, blur) hit a short run of frames.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .encoders import QueryTokens, VideoClip, Vocabulary
from .grounding import GroundTruthBox, read_boxes, write_boxes

SHAPES = ("square", "circle", "triangle")
PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
}
COLORS = tuple(PALETTE)
DIRECTIONS = ("left", "right", "up", "down", "still")
OCCLUDER = (0.5, 0.5, 0.5)
VOCABULARY = Vocabulary(("the", "moving", "past") + COLORS + SHAPES + DIRECTIONS)


class GenConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    n_frames: int = 12
    size: int = 32
    object_size: int = 12
    n_distractors: int = 1
    speed_min: float = 0.5
    speed_max: float = 1.5
    distinct_colors: bool = True
    event_prob: float = 0.3
    event_kinds: tuple[str, ...] = ("occlusion", "blur")
    event_len_min: int = 2
    event_len_max: int = 3
    occlusion_fraction: float = 0.5
    background: float = 0.0

    def validate(self) -> None:
        if self.object_size >= self.size:
            raise GenConfigError(f"object size {self.object_size} does not fit a {self.size}px frame")
        travel = self.speed_max * (self.n_frames - 1)
        if travel > self.size - self.object_size:
            raise GenConfigError(
                f"speed {self.speed_max} over {self.n_frames} frames travels {travel:.1f}px, "
                f"only {self.size - self.object_size}px available"
            )
        if not 0 <= self.speed_min <= self.speed_max:
            raise GenConfigError("need 0 <= speed_min <= speed_max")
        if self.n_frames < 2:
            raise GenConfigError("videos need at least 2 frames")
        if self.n_distractors < 0:
            raise GenConfigError("n_distractors must be >= 0")
        if self.distinct_colors and self.n_distractors > len(COLORS) - 1:
            raise GenConfigError("not enough colours for distinct-coloured distractors")
        unknown = set(self.event_kinds) - {"occlusion", "blur"}
        if unknown:
            raise GenConfigError(f"unknown event kinds {sorted(unknown)}")
        if not 1 <= self.event_len_min <= self.event_len_max <= self.n_frames:
            raise GenConfigError("event length range must lie within [1, n_frames]")

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(value)
            out.append(f"{f.name}={value}")
        return out

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "GenConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in lines:
            if not line.strip() or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in kinds:
                raise GenConfigError(f"unknown generator key {key!r}")
            default = getattr(cls(), key)
            if isinstance(default, bool):
                values[key] = raw.strip().lower() in ("1", "true", "yes")
            elif isinstance(default, tuple):
                values[key] = tuple(s for s in raw.strip().split(",") if s)
            else:
                values[key] = type(default)(raw.strip())
        return cls(**values)


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: float
    start: tuple[float, float]
    velocity: tuple[float, float]

    def center(self, t: int) -> tuple[float, float]:
        return self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t

    def box(self, t: int) -> tuple[float, float, float, float]:
        cx, cy = self.center(t)
        h = self.size / 2.0
        return (cx - h, cy - h, cx + h, cy + h)


@dataclass(frozen=True)
class Event:
    kind: str
    start: int
    end: int  # inclusive
    target: int = 0

    def covers(self, t: int) -> bool:
        return self.start <= t <= self.end


@dataclass
class SceneSpec:
    objects: list[ObjectSpec]
    referent_index: int
    events: list[Event] = field(default_factory=list)

    @property
    def referent(self) -> ObjectSpec:
        return self.objects[self.referent_index]


@dataclass
class VideoSample:
    clip: VideoClip
    tokens: QueryTokens
    gt_boxes: list[GroundTruthBox]
    events: list[Event] = field(default_factory=list)
    scene: SceneSpec | None = None
    name: str = ""

    def has_event(self, kind: str) -> bool:
        return any(e.kind == kind for e in self.events)


def direction_word(velocity: tuple[float, float]) -> str:
    vx, vy = velocity
    if vx == 0 and vy == 0:
        return "still"
    if abs(vx) >= abs(vy):
        return "right" if vx > 0 else "left"
    return "down" if vy > 0 else "up"


def _trajectory(rng: np.random.Generator, cfg: GenConfig) -> tuple[tuple[float, float], tuple[float, float]]:
    speed = rng.uniform(cfg.speed_min, cfg.speed_max)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    velocity = (speed * np.cos(angle), speed * np.sin(angle))
    half = cfg.object_size / 2.0
    span = cfg.n_frames - 1
    start = []
    for v in velocity:
        lo = max(half, half - v * span)
        hi = min(cfg.size - half, cfg.size - half - v * span)
        if lo > hi:
            raise GenConfigError("trajectory cannot stay inside the frame")
        start.append(rng.uniform(lo, hi))
    return (start[0], start[1]), velocity


def make_scene(rng: np.random.Generator, cfg: GenConfig) -> SceneSpec:
    ref_shape = SHAPES[rng.integers(len(SHAPES))]
    ref_color = COLORS[rng.integers(len(COLORS))]
    objects = [ObjectSpec(ref_shape, ref_color, float(cfg.object_size), *_trajectory(rng, cfg))]
    taken = {(ref_shape, ref_color)}
    for _ in range(cfg.n_distractors):
        while True:
            shape = SHAPES[rng.integers(len(SHAPES))]
            if cfg.distinct_colors:
                color = [c for c in COLORS if c != ref_color][rng.integers(len(COLORS) - 1)]
            else:
                color = COLORS[rng.integers(len(COLORS))]
            if (shape, color) not in taken:
                break
        taken.add((shape, color))
        objects.append(ObjectSpec(shape, color, float(cfg.object_size), *_trajectory(rng, cfg)))
    events = []
    if cfg.event_kinds and rng.random() < cfg.event_prob:
        kind = cfg.event_kinds[rng.integers(len(cfg.event_kinds))]
        length = int(rng.integers(cfg.event_len_min, cfg.event_len_max + 1))
        start = int(rng.integers(0, cfg.n_frames - length + 1))
        events.append(Event(kind, start, start + length - 1, 0))
    return SceneSpec(objects, 0, events)


def shape_mask(obj: ObjectSpec, t: int, size: int) -> np.ndarray:
    """Boolean H×W mask of pixels whose centres lie inside the shape."""
    cx, cy = obj.center(t)
    h = obj.size / 2.0
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xs - cx, ys - cy
    if obj.shape == "square":
        return (np.abs(dx) <= h) & (np.abs(dy) <= h)
    if obj.shape == "circle":
        return dx * dx + dy * dy <= h * h
    if obj.shape == "triangle":
        depth = dy + h  # 0 at the apex, 2h at the base
        return (depth >= 0) & (depth <= 2 * h) & (np.abs(dx) <= depth / 2.0)
    raise ValueError(f"unknown shape {obj.shape!r}")


def box_blur(frame: np.ndarray) -> np.ndarray:
    padded = np.pad(frame, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = frame.shape[:2]
    acc = sum(padded[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3))
    return acc / 9.0


def render(scene: SceneSpec, cfg: GenConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    frames = np.full((cfg.n_frames, cfg.size, cfg.size, 3), cfg.background, dtype=np.float64)
    order = [i for i in range(len(scene.objects)) if i != scene.referent_index] + [scene.referent_index]
    occlusion_side = {}
    for k, event in enumerate(scene.events):
        occlusion_side[k] = 0 if rng is None else int(rng.integers(2))
    for t in range(cfg.n_frames):
        frame = frames[t]
        for i in order:
            obj = scene.objects[i]
            frame[shape_mask(obj, t, cfg.size)] = PALETTE[obj.color]
        for k, event in enumerate(scene.events):
            if not event.covers(t):
                continue
            if event.kind == "occlusion":
                x0, y0, x1, y1 = scene.objects[event.target].box(t)
                width = (x1 - x0) * cfg.occlusion_fraction
                if occlusion_side[k]:
                    x0 = x1 - width
                else:
                    x1 = x0 + width
                ys, xs = np.mgrid[0:cfg.size, 0:cfg.size] + 0.5
                cover = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
                frame[cover] = OCCLUDER
            elif event.kind == "blur":
                frames[t] = box_blur(frame)
                frame = frames[t]
    return frames


def query_words(scene: SceneSpec) -> list[str]:
    ref = scene.referent
    words = ["the", ref.color, ref.shape, "moving", direction_word(ref.velocity)]
    others = [o for i, o in enumerate(scene.objects) if i != scene.referent_index]
    if others:
        words += ["past", "the", others[0].color, others[0].shape]
    return words


def generate_sample(seed, cfg: GenConfig | None = None, name: str = "") -> VideoSample:
    """Deterministic sample for ``seed`` (an int or a sequence of ints)."""
    cfg = cfg or GenConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    scene = make_scene(rng, cfg)
    frames = render(scene, cfg, rng)
    boxes = [GroundTruthBox(*scene.referent.box(t)) for t in range(cfg.n_frames)]
    clip = VideoClip(frames, tuple(range(cfg.n_frames)))
    return VideoSample(clip, VOCABULARY.encode(query_words(scene)), boxes, list(scene.events), scene, name)


def sample_clip(
    sample: VideoSample,
    num_frames: int = 4,
    distance: int = 3,
    seed: int | np.random.Generator | None = 0,
) -> tuple[VideoClip, list[GroundTruthBox]]:
    """``num_frames`` frames spaced ``distance`` apart from a random start."""
    total = sample.clip.num_frames
    span = (num_frames - 1) * distance + 1
    if num_frames < 1 or distance < 1:
        raise ValueError("need num_frames >= 1 and distance >= 1")
    if span > total:
        raise ValueError(f"{num_frames} frames at distance {distance} need {span} frames, video has {total}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    start = int(rng.integers(0, total - span + 1))
    idx = [start + k * distance for k in range(num_frames)]
    clip = VideoClip(sample.clip.frames[idx], tuple(sample.clip.frame_indices[i] for i in idx))
    return clip, [sample.gt_boxes[i] for i in idx]


def generate_samples(n: int, seed: int, cfg: GenConfig | None = None, offset: int = 0) -> list[VideoSample]:
    return [generate_sample([seed, offset + i], cfg, name=f"sample_{offset + i:05d}") for i in range(n)]


# ---------------------------------------------------------------------------
# on-disk layout


def is_test_split(name: str, seed: int, test_fraction: float = 0.2) -> bool:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little") / 2**32 < test_fraction


def save_sample(sample: VideoSample, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(sample.clip.frames):
        nc.save_tensor(d / f"frame_{k:03d}.bin", frame)
    (d / "query.txt").write_text(" ".join(sample.tokens.raw_words) + "\n")
    write_boxes(d / "boxes.txt", ((sample.clip.frame_indices[k], b.as_tuple()) for k, b in enumerate(sample.gt_boxes)))
    (d / "events.txt").write_text("".join(f"{e.kind} {e.start} {e.end}\n" for e in sample.events))


def load_sample(directory: str | Path, vocab: Vocabulary = VOCABULARY) -> VideoSample:
    d = Path(directory)
    frame_files = sorted(d.glob("frame_*.bin"))
    if not frame_files:
        raise FileNotFoundError(f"no frames in {d}")
    frames = np.stack([nc.load_tensor(f) for f in frame_files])
    boxes = read_boxes(d / "boxes.txt")
    words = (d / "query.txt").read_text().split()
    events = []
    events_path = d / "events.txt"
    if events_path.exists():
        for line in events_path.read_text().splitlines():
            if line.strip():
                kind, start, end = line.split()
                events.append(Event(kind, int(start), int(end)))
    clip = VideoClip(frames, tuple(idx for idx, _ in boxes))
    return VideoSample(clip, vocab.encode(words), [GroundTruthBox(*b) for _, b in boxes], events, None, d.name)


def make_dataset(
    n: int,
    seed: int,
    cfg: GenConfig | None,
    out: str | Path,
    test_fraction: float = 0.2,
) -> Path:
    """Write ``n`` samples under ``out``; returns the manifest path.

    Besides ``manifest.txt`` (every sample directory), ``train.txt`` and
    ``test.txt`` list the hash-assigned split.
    """
    cfg = cfg or GenConfig()
    cfg.validate()
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    names, train, test = [], [], []
    for sample in generate_samples(n, seed, cfg):
        save_sample(sample, root / sample.name)
        names.append(sample.name)
        (test if is_test_split(sample.name, seed, test_fraction) else train).append(sample.name)
    VOCABULARY.save(root / "vocab.txt")
    (root / "generator.txt").write_text("".join(f"{line}\n" for line in [f"seed={seed}", *cfg.to_lines()]))
    for fname, items in (("manifest.txt", names), ("train.txt", train), ("test.txt", test)):
        (root / fname).write_text("".join(f"{x}\n" for x in items))
    return root / "manifest.txt"


def load_dataset(root: str | Path, split: str = "manifest") -> list[VideoSample]:
    root = Path(root)
    vocab_path = root / "vocab.txt"
    vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else VOCABULARY
    listing = root / f"{split}.txt"
    if not listing.exists():
        raise FileNotFoundError(f"no {split}.txt in {root}")
    return [load_sample(root / name, vocab) for name in listing.read_text().split()]
