"""Grayscale heatmaps of per-cell confidence and per-word patch similarity.

Maps are written as binary PGM (P5) files, one byte per grid cell, so any
image viewer can open them and tests can compare bytes exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .correspondence import cosine_scores
from .model import DCNet
from .synthgen import VideoSample


def normalize_map(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Min-max scale to 0..255 bytes; a constant map becomes all zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.rint((values - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(values)
    return scaled.astype(np.uint8), lo, hi


def pgm_bytes(image: np.ndarray) -> bytes:
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"PGM needs a 2-D uint8 array, got {image.dtype} {image.shape}")
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes()


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    w, h = (int(x) for x in dims.split())
    return np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w)


def write_heatmap(path: Path, values: np.ndarray) -> tuple[float, float]:
    image, lo, hi = normalize_map(values)
    path.write_bytes(pgm_bytes(image))
    return lo, hi


def heatmaps(model: DCNet, sample: VideoSample) -> dict[str, np.ndarray]:
    """Name → grid-shaped map for every frame's confidence and every (frame, word) similarity."""
    out = model.frozen().forward(sample.clip, sample.tokens)
    gh, gw = model.geometry.grid_h, model.geometry.grid_w
    maps: dict[str, np.ndarray] = {}
    for t, (pred, fmap) in enumerate(zip(out.predictions, out.visual)):
        maps[f"conf_frame{t:03d}"] = pred.confidence().reshape(gh, gw)
        table = cosine_scores(fmap.features.data, out.words.features.data)
        for s, word in enumerate(sample.tokens.raw_words):
            maps[f"sim_frame{t:03d}_word{s:02d}_{word}"] = table[:, s].reshape(gh, gw)
    return maps


def write_heatmaps(model: DCNet, sample: VideoSample, directory: str | Path) -> list[Path]:
    """Write one PGM per map plus ``ranges.txt`` lines ``name min max``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written, ranges = [], []
    for name, values in heatmaps(model, sample).items():
        path = d / f"{name}.pgm"
        lo, hi = write_heatmap(path, values)
        ranges.append(f"{name} {lo!r} {hi!r}\n")
        written.append(path)
    (d / "ranges.txt").write_text("".join(ranges))
    return written
