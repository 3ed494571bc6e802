"""Patch-level positive mining and the inter-frame / cross-modal InfoNCE losses.

Mining is a discrete selection made on current feature values; the pooled
positives are differentiable averages of the selected raw rows, so
gradients reach both the anchor and the candidate features.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .encoders import PatchFeatureMap, WordFeatures
from .numcore import Tensor

logger = logging.getLogger(__name__)

INTER_MODES = ("adjacent", "fully_connected")
CROSS_SELECTS = ("patch_topk", "word_topk", "random")
INTER_ALIGNS = ("dense", "sparse")


@dataclass(frozen=True)
class CorrespondenceConfig:
    tau: float = 0.07
    r_inter: int = 8
    r_cross: int = 3
    inter_mode: str = "adjacent"
    cross_select: str = "patch_topk"
    inter_align: str = "dense"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.r_inter < 1 or self.r_cross < 1:
            raise ValueError("sampling divisors must be >= 1")
        if self.inter_mode not in INTER_MODES:
            raise ValueError(f"inter_mode must be one of {INTER_MODES}, got {self.inter_mode!r}")
        if self.cross_select not in CROSS_SELECTS:
            raise ValueError(f"cross_select must be one of {CROSS_SELECTS}, got {self.cross_select!r}")
        if self.inter_align not in INTER_ALIGNS:
            raise ValueError(f"inter_align must be one of {INTER_ALIGNS}, got {self.inter_align!r}")


@dataclass
class PositiveSet:
    """One pooled positive per anchor patch.

    ``anchors`` lists the anchor patch indices the rows of ``pooled`` belong
    to (every patch for dense mining). ``contributors[a]`` holds the candidate
    indices averaged into row ``a``.
    """

    pooled: Tensor | None
    anchors: np.ndarray
    contributors: list[np.ndarray]
    degenerate: bool = False

    @property
    def contributor_indices(self) -> list[np.ndarray]:
        return self.contributors


def k_from_ratio(pool_size: int, divisor: int) -> int:
    if pool_size < 1:
        raise ValueError(f"pool size must be >= 1, got {pool_size}")
    return max(1, pool_size // divisor)


def cosine_scores(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain-array cosine table used for selection (no graph recorded)."""
    def unit(x):
        norm = np.linalg.norm(x, axis=1, keepdims=True)
        return np.where(norm > 0, x / np.where(norm > 0, norm, 1.0), 0.0)

    return unit(a) @ unit(b).T


def _pool(candidates: Tensor, contributors: Sequence[np.ndarray]) -> Tensor:
    selector = np.zeros((len(contributors), candidates.shape[0]))
    for row, idx in enumerate(contributors):
        np.add.at(selector[row], idx, 1.0 / len(idx))
    return nc.matmul(Tensor(selector), candidates)


def mine_inter(v_i: PatchFeatureMap, v_j: PatchFeatureMap, k: int) -> PositiveSet:
    """Top-``k`` most cosine-similar patches of frame j, average-pooled, for every patch of frame i."""
    if v_i.features.shape != v_j.features.shape:
        raise nc.DimensionError(f"frames have shapes {v_i.features.shape} and {v_j.features.shape}")
    p = v_j.num_patches
    if not 1 <= k <= p:
        raise ValueError(f"K={k} outside [1, {p}]")
    sims = cosine_scores(v_i.features.data, v_j.features.data)
    idx = nc.topk(sims, k)
    contributors = list(idx)
    return PositiveSet(_pool(v_j.features, contributors), np.arange(p), contributors)


def cells_in_box(fmap: PatchFeatureMap, box) -> np.ndarray:
    """Indices of cells whose centres fall inside a pixel-space box."""
    x0, y0, x1, y1 = _box_tuple(box)
    centers = fmap.cell_centers()
    inside = (centers[:, 0] >= x0) & (centers[:, 0] <= x1) & (centers[:, 1] >= y0) & (centers[:, 1] <= y1)
    return np.flatnonzero(inside)


def _box_tuple(box) -> tuple[float, float, float, float]:
    if hasattr(box, "x_min"):
        return box.x_min, box.y_min, box.x_max, box.y_max
    x0, y0, x1, y1 = box
    return float(x0), float(y0), float(x1), float(y1)


def mine_sparse(v_i: PatchFeatureMap, v_j: PatchFeatureMap, box_i, box_j) -> PositiveSet:
    """Anchors are the cells inside box i; each gets the mean of the cells inside box j."""
    anchors = cells_in_box(v_i, box_i)
    sources = cells_in_box(v_j, box_j)
    if anchors.size == 0 or sources.size == 0:
        logger.warning("sparse mining: box covers no cell centre (anchors=%d, sources=%d)", anchors.size, sources.size)
        return PositiveSet(None, anchors, [], degenerate=True)
    contributors = [sources] * anchors.size
    return PositiveSet(_pool(v_j.features, contributors), anchors, contributors)


def inter_loss_pair(v_i: PatchFeatureMap, v_j: PatchFeatureMap, positives: PositiveSet, tau: float) -> Tensor:
    if positives.degenerate or positives.pooled is None:
        return Tensor(0.0)
    anchors = v_i.features
    if positives.anchors.size != v_i.num_patches:
        anchors = anchors[positives.anchors]
    table = nc.cosine_table(anchors, v_j.features)
    return _info_nce(anchors, table, positives, tau)


def _positive_similarity(anchors: Tensor, table: Tensor, positives: PositiveSet) -> Tensor:
    """Cosine of each anchor with its pooled positive.

    A single-contributor positive is a candidate row itself, so its cosine is
    read from the table; the numerator then matches its denominator term bit
    for bit (the loss is exactly 0 with one candidate and never negative).
    """
    if all(len(c) == 1 for c in positives.contributors):
        picked = np.array([int(c[0]) for c in positives.contributors])
        return table[np.arange(len(picked)), picked]
    return nc.rowwise_cosine(anchors, positives.pooled)


def _info_nce(anchors: Tensor, table: Tensor, positives: PositiveSet, tau: float) -> Tensor:
    positive_sim = _positive_similarity(anchors, table, positives)
    return nc.mean(nc.logsumexp(table / tau, axis=1) - positive_sim / tau)


def frame_pairs(num_frames: int, mode: str) -> list[tuple[int, int]]:
    """Ordered (anchor, candidate) frame pairs for the aggregation mode."""
    if mode == "adjacent":
        pairs = []
        for i in range(num_frames - 1):
            pairs += [(i, i + 1), (i + 1, i)]
        return pairs
    if mode == "fully_connected":
        return [(i, j) for i in range(num_frames) for j in range(num_frames) if i != j]
    raise ValueError(f"unknown inter_mode {mode!r}")


def inter_loss(
    frames: Sequence[PatchFeatureMap],
    config: CorrespondenceConfig,
    boxes: Sequence | None = None,
) -> Tensor:
    if len(frames) < 2:
        raise ValueError(f"inter-frame loss needs at least 2 frames, got {len(frames)}")
    terms = []
    k = k_from_ratio(frames[0].num_patches, config.r_inter)
    for i, j in frame_pairs(len(frames), config.inter_mode):
        if config.inter_align == "sparse":
            if boxes is None:
                raise ValueError("sparse alignment needs ground-truth boxes")
            positives = mine_sparse(frames[i], frames[j], boxes[i], boxes[j])
        else:
            positives = mine_inter(frames[i], frames[j], k)
        terms.append(inter_loss_pair(frames[i], frames[j], positives, config.tau))
    return nc.mean(nc.stack(terms))


def mine_cross(
    v_i: PatchFeatureMap,
    q: WordFeatures,
    config: CorrespondenceConfig,
    rng_seed: int | np.random.Generator | None = 0,
) -> PositiveSet:
    s = q.num_words
    p = v_i.num_patches
    k = k_from_ratio(s, config.r_cross)
    sims = cosine_scores(v_i.features.data, q.features.data)
    if config.cross_select == "patch_topk":
        contributors = list(nc.topk(sims, k))
    elif config.cross_select == "word_topk":
        chosen_by: list[list[int]] = [[] for _ in range(p)]
        for word, patches in enumerate(nc.topk(sims.T, min(k, p))):
            for patch in patches:
                chosen_by[patch].append(word)
        best = nc.topk(sims, 1)
        contributors = [np.array(words) if words else best[patch] for patch, words in enumerate(chosen_by)]
    elif config.cross_select == "random":
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        contributors = [rng.choice(s, size=k, replace=False) for _ in range(p)]
    else:
        raise ValueError(f"unknown cross_select {config.cross_select!r}")
    return PositiveSet(_pool(q.features, contributors), np.arange(p), contributors)


def cross_loss_frame(v_i: PatchFeatureMap, q: WordFeatures, positives: PositiveSet, tau: float) -> Tensor:
    table = nc.cosine_table(v_i.features, q.features)
    return _info_nce(v_i.features, table, positives, tau)


def cross_loss(
    frames: Sequence[PatchFeatureMap],
    q: WordFeatures,
    config: CorrespondenceConfig,
    rng_seed: int | np.random.Generator | None = 0,
) -> Tensor:
    if not frames:
        raise ValueError("cross-modal loss needs at least one frame")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    terms = [cross_loss_frame(v, q, mine_cross(v, q, config, rng), config.tau) for v in frames]
    return nc.mean(nc.stack(terms))
