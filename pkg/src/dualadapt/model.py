"""Dual-branch model assembly, freeze policy and parameter audit."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, TokenLayout, backbone_shapes, init_backbone
from .head import HeadMaps, head_forward, head_shapes, init_head
from .params import FreezePolicyError, ParamStore
from .pmca import (DeepAdapterParams, ShallowAdapterParams, deep_adapter_forward, deep_shapes,
                   init_deep, init_shallow, shallow_adapter_forward, shallow_shapes)
from .stma import StmaParams, init_stma, stma_forward, stma_shapes
from .tensor import ShapeError, Tensor

PMCA_ORDERINGS = {"SA+DA": ("SA", "DA"), "SA+SA": ("SA", "SA"), "DA+DA": ("DA", "DA"), "DA+SA": ("DA", "SA")}
FUSION_MODES = ("add", "rgb_only", "x_only")
GROUPS = ("backbone", "stma", "shallow", "deep", "noise", "head")
ADAPTER_GROUPS = ("stma", "shallow", "deep", "noise")


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    memory_size: int = 3
    stma_d_rgb: int = 12
    stma_d_x: int = 12
    shallow_h: int = 8
    deep_d: int = 4
    deep_heads: int = 1
    pmca_ordering: str = "SA+DA"
    stma_shared: bool = False
    stma_depthwise: bool = False
    use_stma: bool = True
    use_shallow: bool = True
    use_deep: bool = True
    fusion: str = "add"
    head_trainable: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            bb = dict(self.backbone)
            for key in ("template_size", "search_size"):
                if key in bb:
                    bb[key] = tuple(bb[key])
            self.backbone = BackboneConfig(**bb)
        if self.pmca_ordering not in PMCA_ORDERINGS:
            raise ValueError(f"pmca_ordering must be one of {list(PMCA_ORDERINGS)}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.memory_size < 1:
            raise ValueError("memory_size must be >= 1")
        if self.stma_shared and self.stma_d_rgb != self.stma_d_x:
            raise ValueError("shared STMA needs equal hidden widths for both modalities")
        for w in (self.stma_d_rgb, self.stma_d_x, self.shallow_h, self.deep_d):
            if w < 1:
                raise ValueError("adapter widths must be positive")

    def stages(self) -> tuple[str | None, str | None]:
        """Adapter kind at the (MHA, MLP) stages after component toggles."""
        enabled = {"SA": self.use_shallow, "DA": self.use_deep}
        return tuple(k if enabled[k] else None for k in PMCA_ORDERINGS[self.pmca_ordering])

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["backbone"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["backbone"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(**d)


def param_group(name: str) -> str:
    if name.startswith("backbone."):
        return "backbone"
    if name.startswith("head."):
        return "head"
    if name.startswith("stma."):
        return "stma"
    if name.startswith("pmca."):
        if "noise_" in name:
            return "noise"
        return "deep" if ".da" in name else "shallow"
    raise KeyError(f"parameter {name!r} belongs to no group")


def stma_prefix(config: ModelConfig, modality: str, layer: int) -> str:
    return f"stma.shared.{layer:02d}" if config.stma_shared else f"stma.{modality}.{layer:02d}"


def stage_prefix(layer: int, stage: str, kind: str) -> str:
    return f"pmca.{layer:02d}.{stage}.{kind.lower()}"


def model_shapes(config: ModelConfig) -> dict[str, tuple[tuple[int, ...], bool]]:
    """Every parameter's shape and trainable flag, without allocating anything."""
    bb = config.backbone
    out = {n: (s, False) for n, s in backbone_shapes(bb).items()}
    for i in range(bb.depth):
        if config.use_stma:
            for m, d in (("rgb", config.stma_d_rgb), ("x", config.stma_d_x)):
                for n, s in stma_shapes(stma_prefix(config, m, i), bb.dim, d, config.stma_depthwise).items():
                    out[n] = (s, True)
        for stage, kind in zip(("attn", "mlp"), config.stages()):
            if kind == "SA":
                shapes = shallow_shapes(stage_prefix(i, stage, kind), bb.dim, config.shallow_h)
            elif kind == "DA":
                shapes = deep_shapes(stage_prefix(i, stage, kind), bb.dim, config.deep_d)
            else:
                continue
            out.update({n: (s, True) for n, s in shapes.items()})
    out.update({n: (s, config.head_trainable) for n, s in head_shapes(bb.dim).items()})
    return out


# ----------------------------------------------------------------------------
# runtime model
# ----------------------------------------------------------------------------

@dataclass
class Batch:
    """Dual-modality inputs. Memories are (B, T, H_z, W_z, ch); searches (B, H_x, W_x, ch).

    ``boxes`` holds (B, 4) cx/cy/w/h targets in search-normalized coordinates.
    """

    rgb_memory: np.ndarray
    x_memory: np.ndarray
    rgb_search: np.ndarray
    x_search: np.ndarray
    boxes: np.ndarray | None = None

    def __len__(self) -> int:
        return self.rgb_search.shape[0]


def fuse_branches(y_rgb: Tensor, y_x: Tensor, mode: str = "add") -> Tensor:
    if y_rgb.shape != y_x.shape:
        raise ShapeError(f"fuse_branches: {y_rgb.shape} vs {y_x.shape}")
    if mode == "add":
        return y_rgb + y_x
    if mode == "rgb_only":
        return y_rgb
    if mode == "x_only":
        return y_x
    raise ValueError(f"unknown fusion mode {mode!r}")


class Model:
    def __init__(self, config: ModelConfig, store: ParamStore):
        self.config = config
        self.store = store
        self.backbone = Backbone(store, config.backbone)
        depth = config.backbone.depth
        self.stma: dict[str, list[StmaParams]] = {}
        if config.use_stma:
            for m in ("rgb", "x"):
                self.stma[m] = [StmaParams.from_store(store, stma_prefix(config, m, i), m, i, config.stma_depthwise)
                                for i in range(depth)]
        self.stage_params: list[dict[str, Any]] = []
        for i in range(depth):
            per_stage: dict[str, Any] = {}
            for stage, kind in zip(("attn", "mlp"), config.stages()):
                if kind == "SA":
                    per_stage[stage] = ShallowAdapterParams.from_store(store, stage_prefix(i, stage, kind), i)
                elif kind == "DA":
                    per_stage[stage] = DeepAdapterParams.from_store(store, stage_prefix(i, stage, kind), i,
                                                                    config.deep_heads)
            self.stage_params.append(per_stage)

    @property
    def S(self) -> int:
        bb = self.config.backbone
        return bb.search_size[0] // bb.patch

    def _prompts(self, layer: int, stage: str, x_rgb: Tensor, x_x: Tensor):
        params = self.stage_params[layer].get(stage)
        if params is None:
            return None, None
        if isinstance(params, ShallowAdapterParams):
            # each branch receives the prompt computed from the other one
            return shallow_adapter_forward(x_x, params), shallow_adapter_forward(x_rgb, params)
        return deep_adapter_forward(x_rgb, x_x, params)

    def encode(self, batch: Batch, adapters: bool = True) -> tuple[Tensor, Tensor, TokenLayout]:
        """Final-normed token sequences of both branches."""
        xr, layout = self.backbone.tokenize(batch.rgb_memory, batch.rgb_search)
        xx, layout_x = self.backbone.tokenize(batch.x_memory, batch.x_search)
        if layout != layout_x:
            raise ShapeError("modality layouts differ")
        for i, block in enumerate(self.backbone.blocks):
            if adapters and self.stma:
                xr = xr + stma_forward(xr, self.stma["rgb"][i], layout)
                xx = xx + stma_forward(xx, self.stma["x"][i], layout)
            for stage, branch in (("attn", block.attn_branch), ("mlp", block.mlp_branch)):
                pr, px = self._prompts(i, stage, xr, xx) if adapters else (None, None)
                xr = xr + branch(xr)
                xx = xx + branch(xx)
                if pr is not None:
                    xr = xr + pr
                    xx = xx + px
        return self.backbone.final_norm(xr), self.backbone.final_norm(xx), layout

    def head_inputs(self, batch: Batch, adapters: bool = True) -> Tensor:
        yr, yx, layout = self.encode(batch, adapters)
        off = layout.search_offset
        return fuse_branches(yr[:, off:, :], yx[:, off:, :], self.config.fusion)

    def forward(self, batch: Batch, adapters: bool = True) -> HeadMaps:
        return head_forward(self.head_inputs(batch, adapters), self.store)

    def forward_single(self, memory: np.ndarray, search: np.ndarray) -> HeadMaps:
        """One modality through the plain frozen tracker (no adapters, no fusion)."""
        y, layout = self.backbone.forward(memory, search)
        return head_forward(y[:, layout.search_offset:, :], self.store)


def assemble_model(config: ModelConfig, foundation: dict[str, np.ndarray] | None = None) -> Model:
    """Build parameters from ``config.seed``; optionally load foundation weights.

    ``foundation`` may supply backbone (and head) arrays, typically from a
    pre-training run; whatever it supplies overrides the seeded draw.
    """
    store = ParamStore(seed=config.seed)
    bb = config.backbone
    init_backbone(store, bb, np.random.default_rng([config.seed, 0]))
    rng = np.random.default_rng([config.seed, 1])
    for i in range(bb.depth):
        if config.use_stma:
            shared_done = False
            for m, d in (("rgb", config.stma_d_rgb), ("x", config.stma_d_x)):
                if config.stma_shared and shared_done:
                    continue
                init_stma(store, stma_prefix(config, m, i), bb.dim, d, rng, m, i, config.stma_depthwise)
                shared_done = True
        for stage, kind in zip(("attn", "mlp"), config.stages()):
            if kind == "SA":
                init_shallow(store, stage_prefix(i, stage, kind), bb.dim, config.shallow_h, rng, i)
            elif kind == "DA":
                init_deep(store, stage_prefix(i, stage, kind), bb.dim, config.deep_d, rng, i, config.deep_heads)
    init_head(store, bb.dim, np.random.default_rng([config.seed, 2]), trainable=config.head_trainable)
    if foundation:
        for name, value in foundation.items():
            if name in store:
                store.load_state({name: value}, strict=False)
    freeze_partition_store(store)
    store.lock()
    return Model(config, store)


# ----------------------------------------------------------------------------
# freeze policy and audit
# ----------------------------------------------------------------------------

@dataclass
class ParamAudit:
    trainable_count: int
    frozen_count: int
    total: int
    fraction: float
    groups: dict[str, dict[str, Any]]
    adapter_count: int
    adapter_fraction: float
    widths: dict[str, Any] = field(default_factory=dict)
    stma_delta_16_12: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def freeze_partition_store(store: ParamStore) -> None:
    """Raise unless every backbone parameter (patch, positions, blocks) is frozen."""
    for name, _ in store.items():
        group = param_group(name)
        if group == "backbone" and store.is_trainable(name):
            raise FreezePolicyError(f"{name} belongs to the frozen foundation but is marked trainable")
        if group in ADAPTER_GROUPS and not store.is_trainable(name):
            raise FreezePolicyError(f"adapter parameter {name} is frozen")


def _audit_from(entries: dict[str, tuple[tuple[int, ...], bool]], widths: dict[str, Any]) -> ParamAudit:
    groups = {g: {"count": 0, "trainable": 0, "tensors": 0} for g in GROUPS}
    for name, (shape, trainable) in entries.items():
        g = groups[param_group(name)]
        n = int(np.prod(shape))
        g["count"] += n
        g["tensors"] += 1
        if trainable:
            g["trainable"] += n
    total = sum(g["count"] for g in groups.values())
    trainable = sum(g["trainable"] for g in groups.values())
    adapters = sum(groups[g]["count"] for g in ADAPTER_GROUPS)
    return ParamAudit(trainable_count=trainable, frozen_count=total - trainable, total=total,
                      fraction=trainable / total, groups=groups, adapter_count=adapters,
                      adapter_fraction=adapters / total, widths=widths)


def freeze_partition(model: Model) -> ParamAudit:
    freeze_partition_store(model.store)
    entries = {n: (t.shape, model.store.is_trainable(n)) for n, t in model.store.items()}
    return _audit_from(entries, _widths(model.config))


def _widths(config: ModelConfig) -> dict[str, Any]:
    bb = config.backbone
    return {"depth": bb.depth, "dim": bb.dim, "patch": bb.patch, "n_z": bb.n_z, "n_x": bb.n_x,
            "stma_d_rgb": config.stma_d_rgb, "stma_d_x": config.stma_d_x,
            "shallow_h": config.shallow_h, "deep_d": config.deep_d,
            "pmca_ordering": config.pmca_ordering, "stma_shared": config.stma_shared}


def param_audit(config: ModelConfig, full_scale: bool = False) -> ParamAudit:
    """Count parameters analytically from shapes.

    In full-scale mode the backbone takes ViT-B/16 geometry and the head is
    counted as part of the frozen foundation tracker, so the trainable count
    is exactly the adapter count.
    """
    if full_scale:
        config = replace(config, backbone=BackboneConfig.full_scale(), head_trainable=False)
    audit = _audit_from(model_shapes(config), _widths(config))
    if config.use_stma and not config.stma_shared:
        counts = {}
        for d in (16, 12):
            variant = replace(config, stma_d_rgb=d, stma_d_x=d)
            counts[d] = _audit_from(model_shapes(variant), {}).adapter_count
        audit.stma_delta_16_12 = counts[16] - counts[12]
    return audit
