"""The grounding network: encoders, fusion and box head wired together."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .encoders import (
    PatchFeatureMap,
    QueryEncoderParams,
    QueryTokens,
    VideoClip,
    VideoEncoderParams,
    WordFeatures,
    encode_query,
    encode_video,
)
from .fusion import FusedFeatureMap, FusionParams, attend
from .grounding import GridGeometry, GroundingPrediction, HeadParams, predict
from .numcore import Tensor


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 128
    stride: int = 4
    window: int = 8
    image_size: int = 32
    channels: int = 3
    vocab_size: int = 19
    max_len: int = 12
    anchor: float = 12.0

    @property
    def grid(self) -> int:
        return self.image_size // self.stride

    def geometry(self) -> GridGeometry:
        g = self.grid
        return GridGeometry(g, g, float(self.stride), self.image_size, self.image_size, self.anchor, self.anchor)


@dataclass
class Forward:
    visual: list[PatchFeatureMap]
    words: WordFeatures
    fused: list[FusedFeatureMap]
    predictions: list[GroundingPrediction]


class DCNet:
    def __init__(self, config: ModelConfig, video, query, fusion, head):
        self.config = config
        self.video: VideoEncoderParams = video
        self.query: QueryEncoderParams = query
        self.fusion: FusionParams = fusion
        self.head: HeadParams = head
        self.geometry = config.geometry()

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "DCNet":
        rng = np.random.default_rng(seed)
        return cls(
            config,
            VideoEncoderParams.init(rng, config.dim, config.channels, config.stride, config.window),
            QueryEncoderParams.init(rng, config.vocab_size, config.dim, config.max_len),
            FusionParams.init(rng, config.dim),
            HeadParams.init(rng, config.dim),
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        groups = {
            "video": ("weight", "bias"),
            "query": ("embedding", "token_mixing", "channel", "bias"),
            "fusion": ("w", "w_v", "w_q"),
            "head": ("weight", "bias"),
        }
        return [(f"{g}.{n}", getattr(getattr(self, g), n)) for g, names in groups.items() for n in names]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def frozen(self) -> "DCNet":
        """Copy sharing parameter values but recording no graph (for inference)."""
        twin = DCNet.init(self.config)
        for (_, src), (_, dst) in zip(self.named_parameters(), twin.named_parameters()):
            dst.data = src.data
            dst.requires_grad = False
        return twin

    def forward(self, clip: VideoClip, tokens: QueryTokens) -> Forward:
        visual = encode_video(clip, self.video)
        words = encode_query(tokens, self.query)
        fused = [attend(v, words, self.fusion) for v in visual]
        preds = [predict(v, f, self.head, self.geometry) for v, f in zip(visual, fused)]
        return Forward(visual, words, fused, preds)

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, p in self.named_parameters():
            nc.save_tensor(d / f"{name}.bin", p)
        (d / "model.txt").write_text("".join(f"{k}={v}\n" for k, v in self.config.__dict__.items()))

    @classmethod
    def load(cls, directory: str | Path) -> "DCNet":
        d = Path(directory)
        values = {}
        for line in (d / "model.txt").read_text().splitlines():
            key, _, raw = line.partition("=")
            default = getattr(ModelConfig(), key)
            values[key] = type(default)(raw)
        model = cls.init(ModelConfig(**values))
        for name, p in model.named_parameters():
            data = nc.load_tensor(d / f"{name}.bin")
            if data.shape != p.shape:
                raise ValueError(f"checkpoint {name} has shape {data.shape}, model expects {p.shape}")
            p.data = data
        return model
