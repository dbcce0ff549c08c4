"""Center-point prediction head and the tracking objective."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParamStore
from .tensor import ShapeError, Tensor

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
LAMBDA_GIOU = 2.0
LAMBDA_L1 = 5.0
CLS_EPS = 1e-6

BRANCH_OUT = {"cls": 1, "offset": 2, "size": 2}


@dataclass(frozen=True)
class BBox:
    """Center/extent box in normalized coordinates."""

    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])

    def clamp(self, min_extent: float = 1e-4) -> "BBox":
        x1, y1, x2, y2 = (min(max(v, 0.0), 1.0) for v in self.xyxy())
        w, h = max(x2 - x1, min_extent), max(y2 - y1, min_extent)
        cx = min(max((x1 + x2) / 2, w / 2), 1 - w / 2)
        cy = min(max((y1 + y2) / 2, h / 2), 1 - h / 2)
        return BBox(cx, cy, w, h)


@dataclass
class HeadMaps:
    cls: Tensor      # (B, S, S), post-sigmoid
    offset: Tensor   # (B, 2, S, S), x then y, in [0, 1)
    size: Tensor     # (B, 2, S, S), w then h, normalized

    @property
    def S(self) -> int:
        return self.cls.shape[-1]


def head_shapes(dim: int) -> dict[str, tuple[int, ...]]:
    mid = dim // 2
    shapes: dict[str, tuple[int, ...]] = {}
    for branch, out in BRANCH_OUT.items():
        shapes[f"head.{branch}.conv1.w"] = (3, 3, dim, mid)
        shapes[f"head.{branch}.conv1.b"] = (mid,)
        shapes[f"head.{branch}.conv2.w"] = (3, 3, mid, out)
        shapes[f"head.{branch}.conv2.b"] = (out,)
    return shapes


def init_head(store: ParamStore, dim: int, rng: np.random.Generator, trainable: bool = True) -> None:
    for name, shape in head_shapes(dim).items():
        if name.endswith(".b"):
            value = np.full(shape, -2.0) if name == "head.cls.conv2.b" else np.zeros(shape)
        else:
            fan_in = shape[0] * shape[1] * shape[2]
            value = rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape)
        store.add(name, value, trainable)


def head_forward(tokens: Tensor, store: ParamStore) -> HeadMaps:
    """Two 3x3 convs per branch (C -> C/2 -> out, ReLU between) on the S x S token grid."""
    bsz, n, c = tokens.shape
    s = math.isqrt(n)
    if s * s != n:
        raise ShapeError(f"head needs a square token grid, got N_x={n}")
    grid = tokens.reshape(bsz, s, s, c)
    outs = {}
    for branch in BRANCH_OUT:
        p = f"head.{branch}"
        h = T.relu(T.conv2d(grid, store[f"{p}.conv1.w"], store[f"{p}.conv1.b"]))
        outs[branch] = T.sigmoid(T.conv2d(h, store[f"{p}.conv2.w"], store[f"{p}.conv2.b"]))
    cls = T.clip(outs["cls"].reshape(bsz, s, s), CLS_EPS, 1.0 - CLS_EPS)
    return HeadMaps(cls=cls,
                    offset=outs["offset"].transpose(0, 3, 1, 2),
                    size=outs["size"].transpose(0, 3, 1, 2))


def _np(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def decode_bbox(maps: HeadMaps, index: int = 0) -> tuple[BBox, float]:
    """Peak cell of the score map (first in row-major order on ties) plus its offset/size."""
    cls = _np(maps.cls)[index]
    off = _np(maps.offset)[index]
    size = _np(maps.size)[index]
    s = cls.shape[-1]
    flat = int(np.argmax(cls))
    i, j = divmod(flat, s)
    box = BBox((j + off[0, i, j]) / s, (i + off[1, i, j]) / s, float(size[0, i, j]), float(size[1, i, j]))
    return box, float(cls[i, j])


def center_cell(box: BBox, S: int) -> tuple[int, int]:
    j = min(max(int(math.floor(box.cx * S)), 0), S - 1)
    i = min(max(int(math.floor(box.cy * S)), 0), S - 1)
    return i, j


def encode_maps(box: BBox, S: int) -> HeadMaps:
    """Maps whose decode is ``box``: a single peak, its sub-cell offsets and extents."""
    i, j = center_cell(box, S)
    cls = np.full((1, S, S), 0.01)
    cls[0, i, j] = 0.99
    off = np.zeros((1, 2, S, S))
    off[0, 0, i, j] = box.cx * S - j
    off[0, 1, i, j] = box.cy * S - i
    size = np.zeros((1, 2, S, S))
    size[0, 0, i, j] = box.w
    size[0, 1, i, j] = box.h
    return HeadMaps(Tensor(cls), Tensor(off), Tensor(size))


def gaussian_target(box: BBox, S: int, sigma: float | None = None) -> np.ndarray:
    """Gaussian bump centred on the box's cell; exactly that cell equals 1."""
    sigma = max(1.0, S / 16) if sigma is None else sigma
    i0, j0 = center_cell(box, S)
    ii, jj = np.mgrid[0:S, 0:S]
    return np.exp(-((ii - i0) ** 2 + (jj - j0) ** 2) / (2 * sigma ** 2))


def boxes_at(maps: HeadMaps, cells: np.ndarray) -> Tensor:
    """(B, 4) cx/cy/w/h read at one (row, col) cell per batch element."""
    cells = np.asarray(cells, dtype=int)
    b = np.arange(cells.shape[0])
    s = maps.S
    rows, cols = cells[:, 0], cells[:, 1]
    off_x = maps.offset[b, 0, rows, cols]
    off_y = maps.offset[b, 1, rows, cols]
    w = maps.size[b, 0, rows, cols]
    h = maps.size[b, 1, rows, cols]
    cx = (off_x + cols.astype(float)) * (1.0 / s)
    cy = (off_y + rows.astype(float)) * (1.0 / s)
    return T.stack([cx, cy, w, h], axis=1)


# ----------------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------------

def giou(a: BBox, b: BBox) -> float:
    """IoU minus the fraction of the enclosing hull not covered by the union."""
    if a.w <= 0 or a.h <= 0 or b.w <= 0 or b.h <= 0:
        raise ValueError(f"degenerate box in giou: {a}, {b}")
    ax1, ay1, ax2, ay2 = a.xyxy()
    bx1, by1, bx2, by2 = b.xyxy()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    hull = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    return inter / union - (hull - union) / hull


def iou(a: BBox, b: BBox) -> float:
    ax1, ay1, ax2, ay2 = a.xyxy()
    bx1, by1, bx2, by2 = b.xyxy()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = max(ax2 - ax1, 0.0) * max(ay2 - ay1, 0.0) + max(bx2 - bx1, 0.0) * max(by2 - by1, 0.0) - inter
    return inter / union if union > 0 else 0.0


def giou_tensor(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Differentiable GIoU of (B, 4) cx/cy/w/h predictions against fixed targets."""
    gt = np.asarray(gt, dtype=np.float64)
    if np.any(gt[:, 2:] <= 0):
        raise ValueError("degenerate ground-truth box in giou")
    px1 = pred[:, 0] - pred[:, 2] * 0.5
    py1 = pred[:, 1] - pred[:, 3] * 0.5
    px2 = pred[:, 0] + pred[:, 2] * 0.5
    py2 = pred[:, 1] + pred[:, 3] * 0.5
    gx1, gy1 = gt[:, 0] - gt[:, 2] / 2, gt[:, 1] - gt[:, 3] / 2
    gx2, gy2 = gt[:, 0] + gt[:, 2] / 2, gt[:, 1] + gt[:, 3] / 2
    iw = T.relu(T.minimum(px2, gx2) - T.maximum(px1, gx1))
    ih = T.relu(T.minimum(py2, gy2) - T.maximum(py1, gy1))
    inter = iw * ih
    union = pred[:, 2] * pred[:, 3] + gt[:, 2] * gt[:, 3] - inter
    hull = (T.maximum(px2, gx2) - T.minimum(px1, gx1)) * (T.maximum(py2, gy2) - T.minimum(py1, gy1))
    return inter / union - (hull - union) / hull


def focal_loss(cls, target: np.ndarray) -> Tensor:
    """Penalty-reduced focal loss, normalized by the number of positive cells."""
    cls = T.as_tensor(cls)
    target = np.asarray(target, dtype=np.float64)
    if cls.shape != target.shape:
        raise ShapeError(f"focal_loss: score map {cls.shape} vs target {target.shape}")
    p = cls.data
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("focal_loss: scores must lie strictly inside (0, 1)")
    if np.any(target < 0) or np.any(target > 1):
        raise ValueError("focal_loss: target must lie in [0, 1]")
    pos = (target == 1.0).astype(np.float64)
    neg_weight = (1.0 - pos) * (1.0 - target) ** FOCAL_BETA
    num_pos = max(pos.sum(), 1.0)
    pos_term = (1.0 - cls) ** FOCAL_ALPHA * T.log(cls) * pos
    neg_term = cls ** FOCAL_ALPHA * T.log(1.0 - cls) * neg_weight
    return (pos_term + neg_term).sum() * (-1.0 / num_pos)


def combine_losses(focal, giou_value, l1):
    """focal + lambda_G (1 - GIoU) + lambda_l L1."""
    return focal + LAMBDA_GIOU * (1.0 - giou_value) + LAMBDA_L1 * l1


def loss_terms(cls, target_map: np.ndarray, pred_box: Tensor, gt_box: np.ndarray) -> dict[str, Tensor]:
    pred_box = T.as_tensor(pred_box)
    gt_box = np.asarray(gt_box, dtype=np.float64).reshape(pred_box.shape)
    if pred_box.ndim == 1:
        pred_box, gt_box = pred_box.reshape(1, 4), gt_box.reshape(1, 4)
    return {
        "focal": focal_loss(cls, target_map),
        "giou": giou_tensor(pred_box, gt_box).mean(),
        "l1": T.abs_(pred_box - gt_box).mean(),
    }


def total_loss(cls, target_map: np.ndarray, pred_box, gt_box: np.ndarray) -> Tensor:
    terms = loss_terms(cls, target_map, pred_box, gt_box)
    return combine_losses(terms["focal"], terms["giou"], terms["l1"])
