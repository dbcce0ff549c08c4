"""Synthetic aligned RGB/X sequences with annotated challenge events.

A textured blob drifts across a structured background. The X channel renders
the same target as a warm, untextured blob on a cool background. Events:

* ``darkness``: the RGB frame becomes low-level noise; X is untouched.
* ``occlusion``: an occluder covers part of the target in both channels.
* ``distractor``: a look-alike blob appears in RGB (barely visible in X).
* ``deformation``: the target's aspect ratio oscillates.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .head import BBox

EVENT_KINDS = ("darkness", "occlusion", "distractor", "deformation")


@dataclass
class SynthConfig:
    frame_size: int = 128
    target_min: float = 12.0
    target_max: float = 20.0
    max_speed: float = 2.0
    accel: float = 0.4
    events: tuple[str, ...] = EVENT_KINDS
    events_per_sequence: int = 2
    event_length: tuple[int, int] = (8, 16)
    first_event_frame: int = 6
    darkness_level: float = 0.06
    noise: float = 0.02
    lead_event: str | None = None   # if set, the first scheduled event has this kind

    def __post_init__(self):
        self.events = tuple(self.events)
        self.event_length = tuple(self.event_length)
        unknown = set(self.events) - set(EVENT_KINDS)
        if unknown:
            raise ValueError(f"unknown event kinds {sorted(unknown)}")
        if self.lead_event is not None and self.lead_event not in EVENT_KINDS:
            raise ValueError(f"unknown lead event {self.lead_event!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["events"] = list(self.events)
        d["event_length"] = list(self.event_length)
        return d


@dataclass
class Event:
    start: int
    stop: int   # exclusive
    kind: str

    def frames(self) -> range:
        return range(self.start, self.stop)


@dataclass
class Frame:
    rgb: np.ndarray   # (H, W, 3)
    x: np.ndarray     # (H, W, 1); consumers broadcast it to the backbone's channels
    gt: BBox          # frame-normalized


@dataclass
class SyntheticSequence:
    frames: list[Frame]
    events: list[Event]
    seed: int
    frame_size: int = 128

    def __len__(self) -> int:
        return len(self.frames)

    def event_at(self, index: int) -> str | None:
        for e in self.events:
            if e.start <= index < e.stop:
                return e.kind
        return None

    def gt_pixels(self, index: int) -> tuple[float, float, float, float]:
        b, s = self.frames[index].gt, self.frame_size
        return b.cx * s, b.cy * s, b.w * s, b.h * s


def _smooth_field(rng: np.random.Generator, size: int, waves: int, amp: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.zeros((size, size))
    for _ in range(waves):
        fx, fy = rng.uniform(0.5, 4.0, 2) * rng.choice([-1, 1], 2)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    return amp * out / waves


def _ellipse_alpha(size: int, cx: float, cy: float, w: float, h: float, soft: float = 1.0) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    r = np.sqrt(((xx - cx) / (w / 2)) ** 2 + ((yy - cy) / (h / 2)) ** 2)
    return 1.0 / (1.0 + np.exp((r - 1.0) * min(w, h) / (2.0 * soft)))


def _schedule_events(rng: np.random.Generator, length: int, cfg: SynthConfig) -> list[Event]:
    events: list[Event] = []
    if not cfg.events or cfg.events_per_sequence <= 0:
        return events
    lo, hi = cfg.event_length
    cursor = cfg.first_event_frame
    for k in range(cfg.events_per_sequence):
        dur = int(rng.integers(lo, hi + 1))
        room = length - cursor - dur
        if room < 0:
            break
        start = cursor + int(rng.integers(0, max(1, room // 2) + 1))
        kind = cfg.events[int(rng.integers(len(cfg.events)))]
        if k == 0 and cfg.lead_event is not None:
            kind = cfg.lead_event
        events.append(Event(start, start + dur, kind))
        cursor = start + dur + 2
    return events


def generate_sequence(seed: int, length: int, config: SynthConfig | None = None,
                      render_events: bool = True) -> SyntheticSequence:
    """Deterministic per ``seed``. ``render_events=False`` keeps the event
    schedule but draws every frame as if no event were active."""
    cfg = config or SynthConfig()
    if length < 2:
        raise ValueError("length must be >= 2")
    rng = np.random.default_rng([seed, 101])
    size = cfg.frame_size
    events = _schedule_events(rng, length, cfg)

    base = rng.uniform(0.3, 0.6, 3)
    bg_rgb = np.stack([base[c] + _smooth_field(rng, size, 3, 0.12) for c in range(3)], axis=-1)
    bg_x = 0.2 + _smooth_field(rng, size, 2, 0.04)
    color_a = rng.uniform(0.0, 1.0, 3)
    color_b = 1.0 - color_a
    stripe_angle = rng.uniform(0, np.pi)
    stripe_period = rng.uniform(4.0, 7.0)
    tw, th = rng.uniform(cfg.target_min, cfg.target_max, 2)
    margin = cfg.target_max
    pos = rng.uniform(margin + 8, size - margin - 8, 2)
    vel = rng.normal(0, 1, 2)
    vel *= min(1.0, cfg.max_speed / (np.linalg.norm(vel) + 1e-12))
    d_pos = rng.uniform(margin, size - margin, 2)
    occ_side = rng.choice([-1.0, 1.0])
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    frames: list[Frame] = []
    noise_rng = np.random.default_rng([seed, 202])
    dark_rng = np.random.default_rng([seed, 303])  # separate stream so X noise is unaffected by darkness

    for t in range(length):
        kind = None
        elapsed = 0
        for e in events:
            if e.start <= t < e.stop:
                kind, elapsed = e.kind, t - e.start
        if not render_events:
            kind = None
        w, h = tw, th
        if kind == "deformation":
            s = 1.0 + 0.35 * np.sin(np.pi * (elapsed + 1) / 6.0)
            w, h = tw * s, th / s
        cx, cy = pos
        alpha = _ellipse_alpha(size, cx, cy, w, h)
        phase = ((xx - cx) * np.cos(stripe_angle) + (yy - cy) * np.sin(stripe_angle)) / stripe_period
        stripes = (0.5 + 0.5 * np.sin(2 * np.pi * phase))[..., None]
        tex = stripes * color_a + (1 - stripes) * color_b
        rgb = bg_rgb * (1 - alpha[..., None]) + tex * alpha[..., None]
        warm = 0.85 - 0.15 * ((xx - cx) ** 2 + (yy - cy) ** 2) / (max(w, h) ** 2)
        xg = bg_x * (1 - alpha) + warm * alpha

        if kind == "distractor":
            dcx, dcy = d_pos
            da = _ellipse_alpha(size, dcx, dcy, tw, th)
            dphase = ((xx - dcx) * np.cos(stripe_angle) + (yy - dcy) * np.sin(stripe_angle)) / stripe_period
            ds = (0.5 + 0.5 * np.sin(2 * np.pi * dphase))[..., None]
            rgb = rgb * (1 - da[..., None]) + (ds * color_a + (1 - ds) * color_b) * da[..., None]
            xg = xg * (1 - da) + 0.3 * da
        if kind == "occlusion":
            ox = cx + occ_side * w * 0.25
            mask = (np.abs(xx - ox) < w * 0.45) & (np.abs(yy - cy) < h * 0.7)
            rgb = np.where(mask[..., None], 0.5 + 0.1 * np.sin(xx / 3.0)[..., None], rgb)
            xg = np.where(mask, 0.35, xg)

        rgb = rgb + noise_rng.normal(0, cfg.noise, rgb.shape)
        xg = xg + noise_rng.normal(0, cfg.noise, xg.shape)
        if kind == "darkness":
            rgb = cfg.darkness_level + dark_rng.normal(0, cfg.darkness_level / 2, rgb.shape)
        frames.append(Frame(rgb=np.clip(rgb, 0, 1), x=np.clip(xg, 0, 1)[..., None],
                            gt=BBox(cx / size, cy / size, w / size, h / size)))

        vel = vel + rng.normal(0, cfg.accel, 2)
        speed = np.linalg.norm(vel)
        if speed > cfg.max_speed:
            vel *= cfg.max_speed / speed
        pos = pos + vel
        for k in range(2):
            if pos[k] < margin or pos[k] > size - margin:
                vel[k] = -vel[k]
                pos[k] = min(max(pos[k], margin), size - margin)
        d_pos = d_pos + rng.normal(0, 1.0, 2)
        d_pos = np.clip(d_pos, margin, size - margin)

    return SyntheticSequence(frames=frames, events=events, seed=seed, frame_size=size)


def region_contrast(frame: np.ndarray, box: BBox, frame_size: int) -> tuple[float, float]:
    """(|mean inside box - mean of surrounding ring|, std of the ring).

    The ring is the box grown to twice its extent, minus the box.
    """
    gray = frame.mean(axis=-1)
    yy, xx = np.mgrid[0:frame_size, 0:frame_size] + 0.5
    cx, cy, w, h = box.cx * frame_size, box.cy * frame_size, box.w * frame_size, box.h * frame_size
    inside = (np.abs(xx - cx) < w / 2 * 0.7) & (np.abs(yy - cy) < h / 2 * 0.7)
    outer = (np.abs(xx - cx) < w) & (np.abs(yy - cy) < h)
    ring = outer & ~((np.abs(xx - cx) < w / 2 + 1) & (np.abs(yy - cy) < h / 2 + 1))
    return float(abs(gray[inside].mean() - gray[ring].mean())), float(gray[ring].std())


# ----------------------------------------------------------------------------
# raw-frame archive
# ----------------------------------------------------------------------------

def export_sequence(seq: SyntheticSequence, directory: str | Path) -> Path:
    """Write manifest.json plus one little-endian float64 plane file per frame and modality."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, fr in enumerate(seq.frames):
        names = {}
        for modality in ("rgb", "x"):
            name = f"{i:05d}_{modality}.f64"
            (out / name).write_bytes(np.ascontiguousarray(getattr(fr, modality), dtype="<f8").tobytes())
            names[modality] = name
        entries.append({"index": i, "files": names, "gt": [fr.gt.cx, fr.gt.cy, fr.gt.w, fr.gt.h]})
    manifest = {
        "seed": seq.seed,
        "frame_size": seq.frame_size,
        "shapes": {"rgb": list(seq.frames[0].rgb.shape), "x": list(seq.frames[0].x.shape)},
        "dtype": "<f8",
        "events": [asdict(e) for e in seq.events],
        "frames": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out / "manifest.json"


def load_sequence(directory: str | Path) -> SyntheticSequence:
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text())
    shapes = {m: tuple(s) for m, s in manifest["shapes"].items()}
    frames = []
    for entry in manifest["frames"]:
        planes = {m: np.frombuffer((root / f).read_bytes(), dtype="<f8").reshape(shapes[m]).copy()
                  for m, f in entry["files"].items()}
        frames.append(Frame(rgb=planes["rgb"], x=planes["x"], gt=BBox(*entry["gt"])))
    events = [Event(**e) for e in manifest["events"]]
    return SyntheticSequence(frames=frames, events=events, seed=manifest["seed"],
                             frame_size=manifest["frame_size"])
