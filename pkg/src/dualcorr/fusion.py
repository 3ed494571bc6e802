"""Additive word attention that turns patch features into text-aware features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoders import PatchFeatureMap, WordFeatures
from .numcore import DimensionError, Tensor


@dataclass
class FusionParams:
    w: Tensor  # D, projects tanh(...) down to one logit per (patch, word)
    w_v: Tensor  # D×D
    w_q: Tensor  # D×D

    def parameters(self) -> list[Tensor]:
        return [self.w, self.w_v, self.w_q]

    @property
    def dim(self) -> int:
        return self.w_v.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int):
        scale = 1.0 / np.sqrt(dim)
        return cls(
            nc.parameter(rng.normal(0.0, scale, size=dim), "fusion.w"),
            nc.parameter(rng.normal(0.0, scale, size=(dim, dim)), "fusion.w_v"),
            nc.parameter(rng.normal(0.0, scale, size=(dim, dim)), "fusion.w_q"),
        )


@dataclass
class FusedFeatureMap:
    features: Tensor  # P×D
    attention: Tensor  # P×S, rows sum to one


def attention_logits(v: Tensor, q: Tensor, params: FusionParams) -> Tensor:
    p, d = v.shape
    s = q.shape[0]
    if q.shape[1] != d or params.dim != d:
        raise DimensionError(f"fusion: patch dim {d}, word dim {q.shape[1]}, params dim {params.dim}")
    pv = nc.matmul(v, params.w_v.T).reshape(p, 1, d)
    pq = nc.matmul(q, params.w_q.T).reshape(1, s, d)
    hidden = nc.tanh(pv + pq).reshape(p * s, d)
    return nc.matmul(hidden, params.w.reshape(d, 1)).reshape(p, s)


def attend(v: PatchFeatureMap, q: WordFeatures, params: FusionParams) -> FusedFeatureMap:
    """Softmax over words of w·tanh(W_v v_p + W_q q_s); fused feature is the weighted word sum."""
    if q.num_words < 1:
        raise ValueError("fusion needs at least one word")
    e = nc.softmax(attention_logits(v.features, q.features, params), axis=1)
    return FusedFeatureMap(nc.matmul(e, q.features), e)
