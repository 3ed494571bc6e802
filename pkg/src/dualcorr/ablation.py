"""Train model variants that differ in one config field and tabulate their metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .train_eval import EvalReport, TrainConfig, evaluate, train, with_weights
from .synthgen import VideoSample

logger = logging.getLogger(__name__)

# loss-component ablation rows: (name, lambda_inter, lambda_cross)
LOSS_ROWS = (("both", 1.0, 1.0), ("inter_only", 1.0, 0.0), ("cross_only", 0.0, 1.0), ("neither", 0.0, 0.0))

AXES = {
    "inter_mode": ("adjacent", "fully_connected"),
    "inter_align": ("dense", "sparse"),
    "cross_select": ("patch_topk", "word_topk", "random"),
    "F": (1, 2, 3),
    "R_inter": (4, 8, 16),
    "R_cross": (1, 3, 9),
    "losses": tuple(name for name, _, _ in LOSS_ROWS),
}


def variant(config: TrainConfig, axis: str, value) -> TrainConfig:
    """``config`` with the one field named by ``axis`` set to ``value``."""
    corr = config.correspondence
    if axis in ("inter_mode", "inter_align", "cross_select"):
        return replace(config, correspondence=replace(corr, **{axis: value}))
    if axis == "R_inter":
        return replace(config, correspondence=replace(corr, r_inter=int(value)))
    if axis == "R_cross":
        return replace(config, correspondence=replace(corr, r_cross=int(value)))
    if axis == "F":
        return replace(config, distance=int(value))
    if axis == "losses":
        rows = {name: (li, lc) for name, li, lc in LOSS_ROWS}
        if value not in rows:
            raise ValueError(f"losses variant must be one of {list(rows)}, got {value!r}")
        li, lc = rows[value]
        w = config.weights
        return with_weights(config, lambda_inter=w.lambda_inter * li, lambda_cross=w.lambda_cross * lc)
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")


@dataclass
class AblationRow:
    value: object
    reports: list[EvalReport]

    def mean(self, metric: str = "accu@0.5") -> float:
        return float(np.mean([_metric(r, metric) for r in self.reports]))


def _metric(report: EvalReport, metric: str) -> float:
    if metric.startswith("accu@"):
        return report.accu_at[float(metric[5:])]
    return getattr(report, metric)


@dataclass
class AblationTable:
    axis: str
    seeds: tuple[int, ...]
    rows: list[AblationRow]

    def row(self, value) -> AblationRow:
        for r in self.rows:
            if r.value == value:
                return r
        raise KeyError(value)

    def to_text(self, metrics: Sequence[str] = ("accu@0.4", "accu@0.5", "accu@0.6", "success", "consistency")) -> str:
        header = [self.axis, *metrics]
        lines = ["\t".join(header)]
        for r in self.rows:
            lines.append("\t".join([str(r.value)] + [f"{r.mean(m):.4f}" for m in metrics]))
        return "\n".join(lines) + "\n"


def run_ablation(
    axis: str,
    train_samples: Sequence[VideoSample],
    test_samples: Sequence[VideoSample],
    base: TrainConfig,
    seeds: Sequence[int] = (0,),
    values: Sequence | None = None,
) -> AblationTable:
    """Train one model per (value, seed) and evaluate each on ``test_samples``."""
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    values = AXES[axis] if values is None else values
    rows = []
    for value in values:
        reports = []
        for seed in seeds:
            cfg = replace(variant(base, axis, value), seed=seed)
            model = train(train_samples, cfg).model
            reports.append(evaluate(test_samples, model))
            logger.info("%s=%s seed=%d accu@0.5=%.4f", axis, value, seed, reports[-1].accu_at[0.5])
        rows.append(AblationRow(value, reports))
    return AblationTable(axis, tuple(seeds), rows)
