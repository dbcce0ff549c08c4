"""Success / precision style metrics over tracked sequences."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .head import BBox, iou

THRESHOLDS = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)


def safe_iou(a: BBox, b: BBox) -> float:
    """IoU that never fails: non-finite or degenerate boxes score 0."""
    vals = (a.cx, a.cy, a.w, a.h, b.cx, b.cy, b.w, b.h)
    if not all(math.isfinite(v) for v in vals):
        return 0.0
    return min(max(iou(a, b), 0.0), 1.0)


def center_error(a: BBox, b: BBox, scale: float = 1.0) -> float:
    d = math.hypot((a.cx - b.cx) * scale, (a.cy - b.cy) * scale)
    return d if math.isfinite(d) else math.inf


def success_curve(ious: Sequence[float], thresholds: np.ndarray = THRESHOLDS) -> np.ndarray:
    """Fraction of frames with IoU >= t, for each threshold t."""
    arr = np.asarray(ious, dtype=np.float64)
    if arr.size == 0:
        return np.zeros(len(thresholds))
    return np.array([(arr >= t).mean() for t in thresholds])


def success_auc(ious: Sequence[float], thresholds: np.ndarray = THRESHOLDS) -> float:
    """Trapezoidal area under the success curve, divided by the threshold span."""
    curve = success_curve(ious, thresholds)
    span = thresholds[-1] - thresholds[0]
    area = float(np.sum((curve[1:] + curve[:-1]) * np.diff(thresholds) / 2.0))
    return float(min(max(area / span, 0.0), 1.0))


@dataclass
class MetricBlock:
    frames: int
    mean_iou: float
    success_auc: float
    precision_at_r: float

    @classmethod
    def from_values(cls, ious: Sequence[float], errors: Sequence[float], radius: float) -> "MetricBlock":
        if len(ious) == 0:
            return cls(0, 0.0, 0.0, 0.0)
        errs = np.asarray(errors, dtype=np.float64)
        return cls(len(ious), float(np.mean(ious)), success_auc(ious), float((errs <= radius).mean()))


@dataclass
class EvalReport:
    mean_iou: float
    success_auc: float
    precision_at_r: float
    radius: float
    frames: int
    per_event: dict[str, MetricBlock] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_event"] = {k: asdict(v) for k, v in sorted(self.per_event.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["per_event"] = {k: MetricBlock(**v) for k, v in d.get("per_event", {}).items()}
        return cls(**d)

    def event_iou(self, kind: str) -> float:
        block = self.per_event.get(kind)
        return block.mean_iou if block is not None else float("nan")


def evaluate(pred: Sequence[BBox], gt: Sequence[BBox], events: Sequence[str | None],
             radius: float, scale: float = 1.0) -> EvalReport:
    """``radius`` and centre errors are measured after multiplying coordinates by ``scale``."""
    if not (len(pred) == len(gt) == len(events)):
        raise ValueError(f"length mismatch: pred {len(pred)}, gt {len(gt)}, events {len(events)}")
    ious = [safe_iou(p, g) for p, g in zip(pred, gt)]
    errs = [center_error(p, g, scale) for p, g in zip(pred, gt)]
    overall = MetricBlock.from_values(ious, errs, radius)
    per_event = {}
    for kind in sorted({e for e in events if e is not None}):
        sel = [i for i, e in enumerate(events) if e == kind]
        per_event[kind] = MetricBlock.from_values([ious[i] for i in sel], [errs[i] for i in sel], radius)
    return EvalReport(overall.mean_iou, overall.success_auc, overall.precision_at_r, radius, len(pred), per_event)
