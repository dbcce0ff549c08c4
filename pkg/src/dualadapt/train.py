"""AdamW, the learning-rate schedule, and one optimization step."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backbone import Backbone, BackboneConfig, init_backbone
from .head import BBox, HeadMaps, boxes_at, center_cell, gaussian_target, head_forward, init_head, total_loss
from .model import Batch, Model, ModelConfig
from .params import ParamStore
from .tensor import NonFiniteError, Tensor


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_update(store: ParamStore, state: AdamWState, lr: float, weight_decay: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamWState:
    """One AdamW step over the trainable entries of ``store``.

    Weight decay is decoupled: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
    """
    b1, b2 = betas
    step = state.step + 1
    new = AdamWState(step=step)
    c1, c2 = 1.0 - b1 ** step, 1.0 - b2 ** step
    for name, t in store.trainable():
        g = t.grad if t.grad is not None else np.zeros(t.shape)
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        new.m[name], new.v[name] = m, v
        if lr == 0.0:
            continue
        t.data = t.data - lr * ((m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * t.data)
    return new


def lr_at(step: int, total_steps: int, base_lr: float, mode: str = "tenth", final_fraction: float = 0.2) -> float:
    """Constant rate, reduced over the final ``final_fraction`` of the run.

    mode "tenth" drops to 0.1x; mode "minus10" drops by 10% (0.9x).
    """
    if step < math.ceil((1.0 - final_fraction) * total_steps):
        return base_lr
    if mode == "tenth":
        return base_lr * 0.1
    if mode == "minus10":
        return base_lr * 0.9
    raise ValueError(f"unknown schedule mode {mode!r}")


def training_loss(maps: HeadMaps, boxes: np.ndarray) -> Tensor:
    """Focal + GIoU + L1, with the box read at each ground-truth centre cell."""
    s = maps.S
    gts = [BBox(*b) for b in boxes]
    cells = np.array([center_cell(b, s) for b in gts])
    target = np.stack([gaussian_target(b, s) for b in gts])
    return total_loss(maps.cls, target, boxes_at(maps, cells), np.asarray(boxes))


def _checked_backward(loss: Tensor, where: str) -> float:
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteError(f"{where}: loss is {value}")
    loss.backward()
    return value


def train_step(model: Model, batch: Batch, state: AdamWState, lr: float,
               weight_decay: float = 1e-4) -> tuple[float, AdamWState]:
    """Forward, tracking loss, backward, AdamW on trainable parameters only."""
    model.store.zero_grad()
    loss = training_loss(model.forward(batch), batch.boxes)
    try:
        value = _checked_backward(loss, "train_step")
    except NonFiniteError as exc:
        stats = {n: float(np.abs(t.data).max()) for n, t in model.store.trainable()}
        worst = max(stats, key=stats.get)
        raise NonFiniteError(f"{exc}; largest trainable magnitude {worst}={stats[worst]:.3g}") from exc
    new_state = adamw_update(model.store, state, lr, weight_decay)
    model.store.zero_grad()
    return value, new_state


# ----------------------------------------------------------------------------
# single-branch foundation pre-training
# ----------------------------------------------------------------------------

class Foundation:
    """Trainable single-branch tracker used to emulate a pre-trained foundation."""

    def __init__(self, backbone_cfg: BackboneConfig, seed: int):
        self.store = ParamStore(seed=seed)
        init_backbone(self.store, backbone_cfg, np.random.default_rng([seed, 0]), trainable=True)
        init_head(self.store, backbone_cfg.dim, np.random.default_rng([seed, 2]), trainable=True)
        self.store.lock()
        self.backbone = Backbone(self.store, backbone_cfg)

    def forward(self, memory: np.ndarray, search: np.ndarray) -> HeadMaps:
        y, layout = self.backbone.forward(memory, search)
        return head_forward(y[:, layout.search_offset:, :], self.store)


def pretrain_foundation(config: ModelConfig, sample: Callable[[np.random.Generator], Batch],
                        steps: int, lr: float, weight_decay: float = 1e-4, seed: int = 0,
                        log: Callable[[dict], None] | None = None) -> dict[str, np.ndarray]:
    """Train backbone + head on the RGB half of sampled batches; return the weights."""
    net = Foundation(config.backbone, config.seed)
    rng = np.random.default_rng([seed, 17])
    state = AdamWState()
    for step in range(steps):
        batch = sample(rng)
        net.store.zero_grad()
        value = _checked_backward(training_loss(net.forward(batch.rgb_memory, batch.rgb_search), batch.boxes),
                                  "pretrain")
        state = adamw_update(net.store, state, lr_at(step, steps, lr), weight_decay)
        if log is not None:
            log({"phase": "pretrain", "step": step, "loss": value})
    return net.store.state()
