"""Trainable-from-scratch video and query encoders.

The video encoder cuts each frame into a grid of cells (one per ``stride``
pixels), reads a ``window``-sized zero-padded neighbourhood around each
cell, and maps it through one affine layer and tanh. The query encoder is
an embedding lookup followed by one affine layer that mixes across word
slots and channels, then tanh.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import Tensor


@dataclass(frozen=True)
class VideoClip:
    frames: np.ndarray  # T×H×W×C in [0, 1]
    frame_indices: tuple[int, ...]

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be T×H×W×C, got shape {self.frames.shape}")
        if len(self.frame_indices) != self.frames.shape[0]:
            raise ValueError("one frame index per frame required")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class QueryTokens:
    token_ids: tuple[int, ...]
    raw_words: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class PatchFeatureMap:
    features: Tensor  # P×D
    grid_h: int
    grid_w: int
    stride: int = 1

    def __post_init__(self):
        if self.features.shape[0] != self.grid_h * self.grid_w:
            raise ValueError(
                f"{self.features.shape[0]} patches do not fill a {self.grid_h}x{self.grid_w} grid"
            )

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def cell(self, p: int) -> tuple[int, int]:
        return divmod(p, self.grid_w)

    def cell_centers(self) -> np.ndarray:
        """Pixel (x, y) centre of every cell in patch order."""
        rows, cols = np.divmod(np.arange(self.num_patches), self.grid_w)
        return np.stack([(cols + 0.5) * self.stride, (rows + 0.5) * self.stride], axis=1)


@dataclass
class WordFeatures:
    features: Tensor  # S×D

    @property
    def num_words(self) -> int:
        return self.features.shape[0]


class Vocabulary:
    """Closed word list; a token's id is its line number in the vocabulary file."""

    def __init__(self, words: Sequence[str]):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate word in vocabulary")

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, words: Sequence[str]) -> QueryTokens:
        try:
            ids = tuple(self.index[w] for w in words)
        except KeyError as exc:
            raise KeyError(f"word {exc.args[0]!r} is not in the vocabulary") from None
        return QueryTokens(ids, tuple(words))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{w}\n" for w in self.words))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls([line for line in Path(path).read_text().splitlines() if line])


@dataclass
class VideoEncoderParams:
    weight: Tensor  # (window*window*C)×D
    bias: Tensor  # D
    stride: int
    window: int

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, channels: int = 3, stride: int = 4, window: int | None = None):
        window = stride if window is None else window
        fan_in = window * window * channels
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, dim))
        return cls(nc.parameter(w, "video.weight"), nc.parameter(np.zeros(dim), "video.bias"), stride, window)


@dataclass
class QueryEncoderParams:
    embedding: Tensor  # V×D
    token_mixing: Tensor  # S_max×S_max, mixes word slots
    channel: Tensor  # D×D
    bias: Tensor  # D

    def parameters(self) -> list[Tensor]:
        return [self.embedding, self.token_mixing, self.channel, self.bias]

    @property
    def max_len(self) -> int:
        return self.token_mixing.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, dim: int, max_len: int = 12):
        mixing = np.eye(max_len) + rng.normal(0.0, 0.1, size=(max_len, max_len))
        return cls(
            nc.parameter(rng.normal(0.0, 1.0, size=(vocab_size, dim)), "query.embedding"),
            nc.parameter(mixing, "query.token_mixing"),
            nc.parameter(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim)), "query.channel"),
            nc.parameter(np.zeros(dim), "query.bias"),
        )


def patchify(frames: np.ndarray, stride: int, window: int) -> np.ndarray:
    """Cut T×H×W×C frames into T×P×(window·window·C) row-major cell neighbourhoods."""
    t, h, w, c = frames.shape
    if h % stride or w % stride:
        raise ValueError(f"frame size {h}x{w} is not divisible by stride {stride}")
    if window < stride or (window - stride) % 2:
        raise ValueError(f"window {window} must be >= stride {stride} with an even difference")
    pad = (window - stride) // 2
    padded = np.pad(frames, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    gh, gw = h // stride, w // stride
    views = np.lib.stride_tricks.sliding_window_view(padded, (window, window), axis=(1, 2))
    # views: T × (H+2pad-window+1) × (W+2pad-window+1) × C × window × window
    cells = views[:, ::stride, ::stride][:, :gh, :gw]
    cells = cells.transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(cells).reshape(t, gh * gw, window * window * c)


def encode_video(clip: VideoClip, params: VideoEncoderParams) -> list[PatchFeatureMap]:
    frames = clip.frames
    t, h, w, _ = frames.shape
    patches = patchify(frames, params.stride, params.window)
    gh, gw = h // params.stride, w // params.stride
    p = gh * gw
    flat = Tensor(patches.reshape(t * p, -1))
    feats = nc.tanh(nc.matmul(flat, params.weight) + params.bias)
    return [PatchFeatureMap(feats[i * p:(i + 1) * p], gh, gw, params.stride) for i in range(t)]


def encode_query(tokens: QueryTokens, params: QueryEncoderParams) -> WordFeatures:
    ids = np.asarray(tokens.token_ids, dtype=np.int64)
    vocab = params.embedding.shape[0]
    if ids.size == 0:
        raise ValueError("query has no tokens")
    if ids.min() < 0 or ids.max() >= vocab:
        raise KeyError(f"token id outside vocabulary of size {vocab}: {tokens.token_ids}")
    if ids.size > params.max_len:
        raise ValueError(f"query of {ids.size} tokens exceeds max length {params.max_len}")
    n = ids.size
    mixed = nc.matmul(params.token_mixing[:n, :n], params.embedding[ids])
    return WordFeatures(nc.tanh(nc.matmul(mixed, params.channel) + params.bias))
