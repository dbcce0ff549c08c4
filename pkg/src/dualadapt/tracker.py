"""Online tracking over a dual-modality sequence."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SEARCH_FACTOR, TEMPLATE_FACTOR, context_window, crop_pair
from .head import BBox, decode_bbox
from .memory import MemoryEntry, assemble_memory
from .model import Batch, Model
from .synth import SyntheticSequence
from .tensor import no_grad


@dataclass
class TrackResult:
    boxes: list[BBox]                       # frame-normalized
    confidences: list[float]
    plans: list[list[int]] = field(default_factory=list)   # memory frame indices used per frame

    def __len__(self) -> int:
        return len(self.boxes)

    def pairs(self) -> list[tuple[BBox, float]]:
        return list(zip(self.boxes, self.confidences))


def _to_normalized(box_px: tuple[float, float, float, float], size: int) -> BBox:
    cx, cy, w, h = box_px
    return BBox(cx / size, cy / size, w / size, h / size).clamp(min_extent=1.0 / size)


def track(model: Model, sequence: SyntheticSequence, strategy: str = "uniform", T: int | None = None,
          adapters: bool = True) -> TrackResult:
    """Frame 0 returns the initial box; frame i uses a memory planned over frames [0, i)."""
    T = model.config.memory_size if T is None else T
    bb = model.config.backbone
    zs, xs = bb.template_size[0], bb.search_size[0]
    size = sequence.frame_size
    first = sequence.gt_pixels(0)
    win = context_window(first, TEMPLATE_FACTOR, size)
    zr, zx = crop_pair(sequence, 0, win, zs)
    history = [MemoryEntry(0, {"rgb": zr, "x": zx}, 1.0)]
    result = TrackResult([sequence.frames[0].gt], [1.0], [[0] * T])
    prev = first
    with no_grad():
        for i in range(1, len(sequence)):
            mem = assemble_memory(strategy, T, history)
            search_win = context_window(prev, SEARCH_FACTOR, size)
            sr, sx = crop_pair(sequence, i, search_win, xs)
            batch = Batch(rgb_memory=np.stack([e.crops["rgb"] for e in mem.entries])[None],
                          x_memory=np.stack([e.crops["x"] for e in mem.entries])[None],
                          rgb_search=sr[None], x_search=sx[None])
            crop_box, conf = decode_bbox(model.forward(batch, adapters=adapters))
            box = _to_normalized(search_win.to_frame(crop_box), size)
            prev = (box.cx * size, box.cy * size, box.w * size, box.h * size)
            win = context_window(prev, TEMPLATE_FACTOR, size)
            zr, zx = crop_pair(sequence, i, win, zs)
            history.append(MemoryEntry(i, {"rgb": zr, "x": zx}, conf))
            result.boxes.append(box)
            result.confidences.append(conf)
            result.plans.append(mem.indices)
    return result


def track_sequence(model: Model, sequence: SyntheticSequence, strategy: str = "uniform", T: int | None = None,
                   adapters: bool = True) -> list[tuple[BBox, float]]:
    return track(model, sequence, strategy, T, adapters).pairs()
