"""Per-cell box head, localization / classification losses, and argmax inference.

Each grid cell predicts five numbers: two centre offsets (squashed by a
sigmoid to a position inside the cell), two log-sizes relative to a fixed
anchor, and one confidence logit. Confidence is a softmax across cells,
since every frame holds exactly one referent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .encoders import PatchFeatureMap
from .fusion import FusedFeatureMap
from .numcore import Tensor

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class GridGeometry:
    grid_h: int
    grid_w: int
    cell: float
    image_h: int
    image_w: int
    anchor_w: float
    anchor_h: float

    @property
    def num_cells(self) -> int:
        return self.grid_h * self.grid_w

    def cell_of(self, x: float, y: float) -> int:
        """Cell containing a pixel point; points on a boundary go to the lower-index cell."""
        col = min(max(math.ceil(x / self.cell) - 1, 0), self.grid_w - 1)
        row = min(max(math.ceil(y / self.cell) - 1, 0), self.grid_h - 1)
        return row * self.grid_w + col

    def encode(self, box: Box, cell: int | None = None) -> np.ndarray:
        """Box → (x offset, y offset, log w, log h) relative to ``cell`` (default: its own)."""
        x0, y0, x1, y1 = box
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        if cell is None:
            cell = self.cell_of(cx, cy)
        row, col = divmod(cell, self.grid_w)
        return np.array([
            cx / self.cell - col,
            cy / self.cell - row,
            math.log((x1 - x0) / self.anchor_w),
            math.log((y1 - y0) / self.anchor_h),
        ])

    def decode(self, params: np.ndarray, clip: bool = True) -> np.ndarray:
        """Inverse of :meth:`encode` for every cell: P×4 params → P×4 pixel boxes."""
        params = np.asarray(params, dtype=np.float64).reshape(-1, 4)
        rows, cols = np.divmod(np.arange(params.shape[0]), self.grid_w)
        cx = (cols + params[:, 0]) * self.cell
        cy = (rows + params[:, 1]) * self.cell
        w = self.anchor_w * np.exp(params[:, 2])
        h = self.anchor_h * np.exp(params[:, 3])
        boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
        if clip:
            boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, self.image_w)
            boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, self.image_h)
        return boxes


@dataclass(frozen=True)
class GroundTruthBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> Box:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def responsible_cell(self, geometry: GridGeometry) -> int:
        return geometry.cell_of(*self.center)


@dataclass
class HeadParams:
    weight: Tensor  # D×5
    bias: Tensor  # 5

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int):
        weight = rng.normal(0.0, 0.1 / np.sqrt(dim), size=(dim, 5))
        bias = np.zeros(5)
        return cls(nc.parameter(weight, "head.weight"), nc.parameter(bias, "head.bias"))


@dataclass
class GroundingPrediction:
    raw: Tensor  # P×5 head outputs
    geometry: GridGeometry

    @property
    def boxes(self) -> Tensor:
        """P×4 box parameters: sigmoid centre offsets, then log sizes."""
        return nc.concat([nc.sigmoid(self.raw[:, 0:2]), self.raw[:, 2:4]], axis=1)

    @property
    def conf_logits(self) -> Tensor:
        return self.raw[:, 4]

    @property
    def selected_cell(self) -> int:
        return int(np.argmax(self.raw.data[:, 4]))

    def decoded(self) -> np.ndarray:
        return self.geometry.decode(self.boxes.data)

    @property
    def selected(self) -> tuple[np.ndarray, float]:
        cell = self.selected_cell
        return self.decoded()[cell], float(self.raw.data[cell, 4])

    def confidence(self) -> np.ndarray:
        logits = self.raw.data[:, 4]
        z = np.exp(logits - logits.max())
        return z / z.sum()


def head_input(visual: PatchFeatureMap | Tensor, fused: FusedFeatureMap | Tensor) -> Tensor:
    """Per-cell head input: the elementwise product of visual and fused features.

    The product keeps only what a patch shares with the words it attends
    to, so a cell scores high when its appearance matches the query.
    """
    v = visual.features if isinstance(visual, PatchFeatureMap) else visual
    f = fused.features if isinstance(fused, FusedFeatureMap) else fused
    return v * f


def predict(
    visual: PatchFeatureMap,
    fused: FusedFeatureMap,
    params: HeadParams,
    geometry: GridGeometry,
) -> GroundingPrediction:
    x = head_input(visual, fused)
    return GroundingPrediction(nc.matmul(x, params.weight) + params.bias, geometry)


def loc_loss(pred: GroundingPrediction, gt: GroundTruthBox) -> Tensor:
    cell = gt.responsible_cell(pred.geometry)
    target = pred.geometry.encode(gt.as_tuple(), cell)
    row = pred.raw[cell]
    params = nc.concat([nc.sigmoid(row[0:2]), row[2:4]])
    return nc.mean(nc.square(params - target))


def cls_loss(pred: GroundingPrediction, gt: GroundTruthBox) -> Tensor:
    cell = gt.responsible_cell(pred.geometry)
    return -nc.log_softmax(pred.conf_logits, axis=0)[cell]


def infer(pred: GroundingPrediction) -> np.ndarray:
    """Decoded box of the most confident cell (lowest index on ties)."""
    return pred.selected[0]


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def write_boxes(path: str | Path, boxes: Iterable[tuple[int, Sequence[float]]]) -> None:
    lines = [f"{idx} {' '.join(repr(float(v)) for v in box)}\n" for idx, box in boxes]
    Path(path).write_text("".join(lines))


def read_boxes(path: str | Path) -> list[tuple[int, Box]]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{n}: expected 'frame_idx x_min y_min x_max y_max'")
        out.append((int(parts[0]), tuple(float(v) for v in parts[1:])))
    return out
