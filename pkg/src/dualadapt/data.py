"""Crops around boxes and the training-batch sampler."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .backbone import BackboneConfig
from .head import BBox
from .memory import plan_indices
from .model import Batch
from .synth import SyntheticSequence

TEMPLATE_FACTOR = 2.0
SEARCH_FACTOR = 4.0
MIN_SIDE = 4.0


@dataclass(frozen=True)
class CropWindow:
    """Square window in frame pixels: centre and side length."""

    cx: float
    cy: float
    side: float

    def to_crop(self, box_px: tuple[float, float, float, float]) -> BBox:
        """Frame-pixel cx/cy/w/h -> crop-normalized box."""
        cx, cy, w, h = box_px
        x0, y0 = self.cx - self.side / 2, self.cy - self.side / 2
        return BBox((cx - x0) / self.side, (cy - y0) / self.side, w / self.side, h / self.side)

    def to_frame(self, box: BBox) -> tuple[float, float, float, float]:
        x0, y0 = self.cx - self.side / 2, self.cy - self.side / 2
        return (x0 + box.cx * self.side, y0 + box.cy * self.side, box.w * self.side, box.h * self.side)


def context_window(box_px: tuple[float, float, float, float], factor: float, frame_size: int) -> CropWindow:
    """Window of side factor*sqrt(w*h) centred on the box; degenerate boxes are clamped."""
    cx, cy, w, h = box_px
    side = factor * math.sqrt(max(w, 1.0) * max(h, 1.0))
    side = float(min(max(side, MIN_SIDE), 2.0 * frame_size))
    cx = float(min(max(cx, 0.0), frame_size))
    cy = float(min(max(cy, 0.0), frame_size))
    return CropWindow(cx, cy, side)


def crop_region(frame: np.ndarray, window: CropWindow, out_size: int) -> np.ndarray:
    """Bilinear resample of ``window`` to (out_size, out_size, ch); edges replicate."""
    step = window.side / out_size
    grid = (np.arange(out_size) + 0.5) * step - window.side / 2 - 0.5
    rr, cc = np.meshgrid(window.cy + grid, window.cx + grid, indexing="ij")
    out = np.empty((out_size, out_size, frame.shape[-1]))
    for ch in range(frame.shape[-1]):
        out[..., ch] = map_coordinates(frame[..., ch], [rr, cc], order=1, mode="nearest")
    return out


def crop_pair(seq: SyntheticSequence, index: int, window: CropWindow, out_size: int,
              channels: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """RGB and X crops; a single-plane X frame is repeated to ``channels``."""
    fr = seq.frames[index]
    x = crop_region(fr.x, window, out_size)
    if x.shape[-1] == 1 and channels != 1:
        x = np.repeat(x, channels, axis=-1)
    return crop_region(fr.rgb, window, out_size), x


class TrainingSampler:
    """Draws batches of (memory, search, box) from a fixed pool of sequences.

    Templates come from the uniform memory plan over frames before the search
    frame, cropped around ground truth. The search window is jittered in
    centre and scale. ``event_fraction`` of samples are drawn from event frames.
    """

    def __init__(self, sequences: list[SyntheticSequence], backbone: BackboneConfig, memory_size: int,
                 batch_size: int, center_jitter: float = 0.25, scale_jitter: float = 0.15,
                 event_fraction: float = 0.5, event_kinds: tuple[str, ...] | None = None):
        if not sequences:
            raise ValueError("sampler needs at least one sequence")
        self.sequences = sequences
        self.backbone = backbone
        self.T = memory_size
        self.batch_size = batch_size
        self.center_jitter = center_jitter
        self.scale_jitter = scale_jitter
        self.event_fraction = event_fraction
        self.event_frames = [
            (si, f) for si, s in enumerate(sequences)
            for f in range(1, len(s)) if s.event_at(f) is not None and (event_kinds is None or s.event_at(f) in event_kinds)
        ]

    def _pick(self, rng: np.random.Generator) -> tuple[int, int]:
        if self.event_frames and rng.random() < self.event_fraction:
            return self.event_frames[int(rng.integers(len(self.event_frames)))]
        si = int(rng.integers(len(self.sequences)))
        return si, int(rng.integers(1, len(self.sequences[si])))

    def sample_one(self, rng: np.random.Generator):
        si, f = self._pick(rng)
        seq = self.sequences[si]
        zs, xs = self.backbone.template_size[0], self.backbone.search_size[0]
        mem_rgb, mem_x = [], []
        for idx in plan_indices("uniform", self.T, f):
            win = context_window(seq.gt_pixels(idx), TEMPLATE_FACTOR, seq.frame_size)
            r, x = crop_pair(seq, idx, win, zs)
            mem_rgb.append(r)
            mem_x.append(x)
        cx, cy, w, h = seq.gt_pixels(f)
        base = context_window((cx, cy, w, h), SEARCH_FACTOR, seq.frame_size)
        side = base.side * float(np.exp(rng.normal(0.0, self.scale_jitter)))
        shift = rng.uniform(-self.center_jitter, self.center_jitter, 2) * side
        win = CropWindow(cx + shift[0], cy + shift[1], side)
        sr, sx = crop_pair(seq, f, win, xs)
        box = win.to_crop((cx, cy, w, h))
        return np.stack(mem_rgb), np.stack(mem_x), sr, sx, box.as_array()

    def __call__(self, rng: np.random.Generator) -> Batch:
        items = [self.sample_one(rng) for _ in range(self.batch_size)]
        cols = list(zip(*items))
        return Batch(rgb_memory=np.stack(cols[0]), x_memory=np.stack(cols[1]),
                     rgb_search=np.stack(cols[2]), x_search=np.stack(cols[3]), boxes=np.stack(cols[4]))
