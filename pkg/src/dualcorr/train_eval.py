"""Combined objective, RMSProp training loop and grounding metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numcore as nc
from .correspondence import CorrespondenceConfig, cross_loss, inter_loss
from .encoders import QueryTokens, VideoClip
from .grounding import GroundTruthBox, cls_loss, infer, iou, loc_loss
from .model import DCNet, ModelConfig
from .numcore import Tensor
from .synthgen import VideoSample, sample_clip

logger = logging.getLogger(__name__)

ALPHAS = (0.4, 0.5, 0.6)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_loc: float = 5.0
    lambda_cls: float = 1.0
    lambda_inter: float = 1.0
    lambda_cross: float = 1.0

    def __post_init__(self):
        if min(self.lambda_loc, self.lambda_cls, self.lambda_inter, self.lambda_cross) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    loc: float
    cls: float
    inter: float
    cross: float
    total: float
    graph: Tensor | None = field(default=None, repr=False, compare=False)

    def line(self, step: int) -> str:
        vals = (self.loc, self.cls, self.inter, self.cross, self.total)
        return f"{step} " + " ".join(format(v, ".17g") for v in vals)


def combine(loc, cls, inter, cross, weights: LossWeights) -> LossBreakdown:
    """Weighted sum of the four losses, kept differentiable in ``graph``."""
    parts = [nc.as_tensor(x) for x in (loc, cls, inter, cross)]
    lambdas = (weights.lambda_loc, weights.lambda_cls, weights.lambda_inter, weights.lambda_cross)
    total = None
    for lam, part in zip(lambdas, parts):
        if lam == 0:
            continue
        term = part * lam
        total = term if total is None else total + term
    if total is None:
        total = nc.Tensor(0.0)
    return LossBreakdown(*(p.item() for p in parts), total.item(), total)


def total_loss(
    batch: tuple[VideoClip, QueryTokens, Sequence[GroundTruthBox]],
    model: DCNet,
    weights: LossWeights,
    config: CorrespondenceConfig,
    rng: np.random.Generator | int | None = 0,
) -> LossBreakdown:
    """All four losses over one clip; box losses averaged over its frames."""
    clip, tokens, boxes = batch
    out = model.forward(clip, tokens)
    t = len(out.predictions)
    loc = nc.mean(nc.stack([loc_loss(p, b) for p, b in zip(out.predictions, boxes)]))
    cls = nc.mean(nc.stack([cls_loss(p, b) for p, b in zip(out.predictions, boxes)]))
    inter = nc.Tensor(0.0)
    if t >= 2 and weights.lambda_inter > 0:
        inter = inter_loss(out.visual, config, [b.as_tuple() for b in boxes])
    cross = nc.Tensor(0.0)
    if weights.lambda_cross > 0:
        cross = cross_loss(out.visual, out.words, config, rng)
    return combine(loc, cls, inter, cross, weights)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    rho: float = 0.99
    eps: float = 1e-8
    power: float = 0.9
    steps: int = 2000

    def lr_at(self, step: int) -> float:
        return self.lr * (1.0 - step / self.steps) ** self.power


class RMSProp:
    def __init__(self, params: Sequence[Tensor], config: OptimizerConfig):
        self.params = list(params)
        self.config = config
        self.square_avg = [np.zeros_like(p.data) for p in self.params]

    def step(self, step: int) -> None:
        c = self.config
        lr = c.lr_at(step)
        for p, avg in zip(self.params, self.square_avg):
            if p.grad is None:
                continue
            avg *= c.rho
            avg += (1.0 - c.rho) * p.grad * p.grad
            p.data = p.data - lr * p.grad / (np.sqrt(avg) + c.eps)

    def zero_grad(self) -> None:
        nc.zero_grads(self.params)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = ModelConfig()
    correspondence: CorrespondenceConfig = CorrespondenceConfig()
    weights: LossWeights = LossWeights()
    optimizer: OptimizerConfig = OptimizerConfig()
    frames: int = 4
    distance: int = 3
    seed: int = 0


@dataclass
class TrainResult:
    model: DCNet
    log: list[LossBreakdown]

    def log_lines(self) -> list[str]:
        return [b.line(i) for i, b in enumerate(self.log)]


def train(
    samples: Sequence[VideoSample],
    config: TrainConfig,
    log_file: Path | None = None,
    on_step: Callable[[int, LossBreakdown], None] | None = None,
) -> TrainResult:
    """One clip per step, drawn by a seeded generator; aborts on a non-finite loss."""
    if not samples:
        raise ValueError("training needs at least one sample")
    model = DCNet.init(config.model, config.seed)
    opt = RMSProp(model.parameters(), config.optimizer)
    rng = np.random.default_rng([config.seed, 1])
    log: list[LossBreakdown] = []
    handle = open(log_file, "w") if log_file is not None else None
    try:
        for step in range(config.optimizer.steps):
            sample = samples[int(rng.integers(len(samples)))]
            clip, boxes = sample_clip(sample, config.frames, config.distance, rng)
            opt.zero_grad()
            parts = total_loss((clip, sample.tokens, boxes), model, config.weights, config.correspondence, rng)
            if not math.isfinite(parts.total):
                raise TrainingDiverged(f"non-finite loss {parts.total} at step {step}")
            nc.backward(parts.graph)
            opt.step(step)
            parts.graph = None
            log.append(parts)
            if handle is not None:
                handle.write(parts.line(step) + "\n")
            if on_step is not None:
                on_step(step, parts)
    finally:
        if handle is not None:
            handle.close()
    return TrainResult(model, log)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class EvalReport:
    accu_at: dict[float, float]
    success: float
    precision: float
    consistency: float
    n_videos: int = 0
    n_frames: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["accu_at"] = {f"{a:g}": v for a, v in self.accu_at.items()}
        return d

    def to_text(self) -> str:
        lines = [f"accu@{a:g}={v:.6f}" for a, v in sorted(self.accu_at.items())]
        lines += [
            f"success={self.success:.6f}",
            f"precision={self.precision:.6f}",
            f"consistency={self.consistency:.6f}",
            f"n_videos={self.n_videos}",
            f"n_frames={self.n_frames}",
        ]
        return "\n".join(lines) + "\n"

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.txt").write_text(self.to_text())
        (d / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def accuracy_at(video_ious: Sequence[Sequence[float]], alpha: float) -> float:
    """Fraction of videos whose every frame has IoU strictly above ``alpha``."""
    if not video_ious:
        return 0.0
    return sum(all(v > alpha for v in ious) for ious in video_ious) / len(video_ious)


SUCCESS_THRESHOLDS = np.round(np.arange(0.0, 1.0001, 0.05), 10)


def success_auc(frame_ious: Iterable[float]) -> float:
    """Trapezoid area under the success-rate curve (IoU >= threshold) on [0, 1]."""
    ious = np.asarray(list(frame_ious), dtype=np.float64)
    if ious.size == 0:
        return 0.0
    rates = np.array([(ious >= th).mean() for th in SUCCESS_THRESHOLDS])
    return float(np.trapezoid(rates, SUCCESS_THRESHOLDS))


def precision_at(distances: Iterable[float], threshold: float) -> float:
    d = np.asarray(list(distances), dtype=np.float64)
    return float((d <= threshold).mean()) if d.size else 0.0


def precision_threshold(image_side: int) -> float:
    """The conventional 20 px radius, rescaled from 256 px inputs."""
    return 20.0 * image_side / 256.0


def center_distance(a, b) -> float:
    return math.hypot((a[0] + a[2]) / 2 - (b[0] + b[2]) / 2, (a[1] + a[3]) / 2 - (b[1] + b[3]) / 2)


def temporal_consistency(video_boxes: Sequence[Sequence[Sequence[float]]]) -> float:
    """Mean IoU between predicted boxes of consecutive frames."""
    scores = [iou(b[k], b[k + 1]) for b in video_boxes for k in range(len(b) - 1)]
    return float(np.mean(scores)) if scores else 1.0


def report_from_boxes(
    predicted: Sequence[Sequence[Sequence[float]]],
    truth: Sequence[Sequence[Sequence[float]]],
    image_side: int,
    alphas: Sequence[float] = ALPHAS,
) -> EvalReport:
    video_ious = [[iou(p, g) for p, g in zip(pv, gv)] for pv, gv in zip(predicted, truth)]
    frame_ious = [x for v in video_ious for x in v]
    dists = [center_distance(p, g) for pv, gv in zip(predicted, truth) for p, g in zip(pv, gv)]
    return EvalReport(
        {a: accuracy_at(video_ious, a) for a in alphas},
        success_auc(frame_ious),
        precision_at(dists, precision_threshold(image_side)),
        temporal_consistency(predicted),
        len(video_ious),
        len(frame_ious),
    )


def predict_video(model: DCNet, sample: VideoSample) -> list[np.ndarray]:
    frozen = model.frozen()
    out = frozen.forward(sample.clip, sample.tokens)
    return [infer(p) for p in out.predictions]


def evaluate(samples: Sequence[VideoSample], model: DCNet, alphas: Sequence[float] = ALPHAS) -> EvalReport:
    predicted = [predict_video(model, s) for s in samples]
    truth = [[b.as_tuple() for b in s.gt_boxes] for s in samples]
    return report_from_boxes(predicted, truth, model.config.image_size, alphas)


def with_weights(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, weights=replace(config.weights, **kw))


def toy_gradient_check(seed: int = 0, eps: float = 1e-5) -> float:
    """Finite-difference check of the full weighted loss at T=2, P=4, S=3, D=4.

    Every model parameter is perturbed; the return value is the worst
    relative error over all coordinates.
    """
    rng = np.random.default_rng(seed)
    config = ModelConfig(dim=4, stride=4, window=4, image_size=8, max_len=3, anchor=4.0)
    model = DCNet.init(config, seed)
    clip = VideoClip(rng.uniform(0, 1, size=(2, 8, 8, 3)), (0, 1))
    words = rng.integers(0, config.vocab_size, size=3)
    tokens = QueryTokens(tuple(int(w) for w in words), tuple(f"w{w}" for w in words))
    boxes = []
    for _ in range(2):
        x0, y0 = rng.uniform(0.5, 3.0, size=2)
        w, h = rng.uniform(2.0, 4.5, size=2)
        boxes.append(GroundTruthBox(x0, y0, x0 + w, y0 + h))
    corr = CorrespondenceConfig()

    def f(_params):
        return total_loss((clip, tokens, boxes), model, LossWeights(), corr, rng=0).graph

    return nc.finite_diff_check(f, model.parameters(), eps=eps)
