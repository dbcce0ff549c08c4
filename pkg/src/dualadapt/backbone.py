"""Frozen ViT-style encoder: patch embedding, positions, pre-norm blocks.

One set of weights serves both modality branches. Template-memory frames
and the search frame are tokenized separately, each template frame gets the
same positional embedding, and the frames are concatenated in temporal order
ahead of the search tokens.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .params import ParamStore
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class BackboneConfig:
    depth: int = 4
    dim: int = 64
    heads: int = 4
    patch: int = 8
    template_size: tuple[int, int] = (32, 32)
    search_size: tuple[int, int] = (64, 64)
    mlp_ratio: int = 4
    in_chans: int = 3

    def __post_init__(self):
        for extent in (*self.template_size, *self.search_size):
            if extent % self.patch:
                raise ShapeError(f"patch size {self.patch} does not divide image extent {extent}")
        if self.dim % self.heads:
            raise ShapeError(f"width {self.dim} not divisible by {self.heads} heads")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def n_z(self) -> int:
        return (self.template_size[0] // self.patch) * (self.template_size[1] // self.patch)

    @property
    def n_x(self) -> int:
        return (self.search_size[0] // self.patch) * (self.search_size[1] // self.patch)

    @classmethod
    def full_scale(cls) -> "BackboneConfig":
        """ViT-B/16 geometry at 128/256 template/search resolution."""
        return cls(depth=12, dim=768, heads=12, patch=16,
                   template_size=(128, 128), search_size=(256, 256))


@dataclass(frozen=True)
class TokenLayout:
    T: int
    n_z: int
    n_x: int
    dim: int

    @property
    def total(self) -> int:
        return self.T * self.n_z + self.n_x

    @property
    def search_offset(self) -> int:
        return self.T * self.n_z

    def check(self, x: Tensor) -> None:
        if x.ndim not in (2, 3) or x.shape[-2] != self.total or x.shape[-1] != self.dim:
            raise ShapeError(f"tokens {x.shape} do not match layout (T={self.T}, "
                             f"N_z={self.n_z}, N_x={self.n_x}, C={self.dim})")


def backbone_shapes(cfg: BackboneConfig) -> dict[str, tuple[int, ...]]:
    c, hidden = cfg.dim, cfg.dim * cfg.mlp_ratio
    patch_in = cfg.patch * cfg.patch * cfg.in_chans
    shapes: dict[str, tuple[int, ...]] = {
        "backbone.patch.w": (patch_in, c),
        "backbone.patch.b": (c,),
        "backbone.pos_z": (cfg.n_z, c),
        "backbone.pos_x": (cfg.n_x, c),
        "backbone.norm.g": (c,),
        "backbone.norm.b": (c,),
    }
    for i in range(cfg.depth):
        p = f"backbone.blocks.{i:02d}"
        shapes.update({
            f"{p}.ln1.g": (c,), f"{p}.ln1.b": (c,),
            f"{p}.qkv.w": (c, 3 * c), f"{p}.qkv.b": (3 * c,),
            f"{p}.proj.w": (c, c), f"{p}.proj.b": (c,),
            f"{p}.ln2.g": (c,), f"{p}.ln2.b": (c,),
            f"{p}.fc1.w": (c, hidden), f"{p}.fc1.b": (hidden,),
            f"{p}.fc2.w": (hidden, c), f"{p}.fc2.b": (c,),
        })
    return shapes


def init_backbone(store: ParamStore, cfg: BackboneConfig, rng: np.random.Generator,
                  trainable: bool = False) -> None:
    """Seeded random draw; frozen unless ``trainable`` (foundation pre-training)."""
    for name, shape in backbone_shapes(cfg).items():
        if name.endswith(".g"):
            value = np.ones(shape)
        elif name.endswith(".b"):
            value = np.zeros(shape)
        elif ".pos_" in name:
            value = rng.normal(0.0, 0.02, shape)
        elif name == "backbone.patch.w":
            value = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
        else:
            value = rng.normal(0.0, 0.02, shape)
        store.add(name, value, trainable)


class Block:
    """Views into one block's weights."""

    def __init__(self, store: ParamStore, index: int, heads: int):
        p = f"backbone.blocks.{index:02d}"
        self.index = index
        self.heads = heads
        self.ln1 = (store[f"{p}.ln1.g"], store[f"{p}.ln1.b"])
        self.qkv = (store[f"{p}.qkv.w"], store[f"{p}.qkv.b"])
        self.proj = (store[f"{p}.proj.w"], store[f"{p}.proj.b"])
        self.ln2 = (store[f"{p}.ln2.g"], store[f"{p}.ln2.b"])
        self.fc1 = (store[f"{p}.fc1.w"], store[f"{p}.fc1.b"])
        self.fc2 = (store[f"{p}.fc2.w"], store[f"{p}.fc2.b"])

    def attn_branch(self, x: Tensor) -> Tensor:
        """MHA(LN(x)), the quantity the residual adds at the attention stage."""
        h = T.layer_norm(x, *self.ln1)
        qkv = T.linear(h, *self.qkv)
        c = x.shape[-1]
        q, k, v = qkv[:, :, :c], qkv[:, :, c:2 * c], qkv[:, :, 2 * c:]
        return T.linear(T.attention(q, k, v, self.heads), *self.proj)

    def mlp_branch(self, x: Tensor) -> Tensor:
        h = T.layer_norm(x, *self.ln2)
        return T.linear(T.gelu(T.linear(h, *self.fc1)), *self.fc2)


Hook = Optional[Callable[[Tensor], Tensor]]


@dataclass
class AdapterHooks:
    """Optional per-stage adapters for :func:`block_forward`.

    ``entry`` returns a residual delta at block entry; ``attn`` and ``mlp``
    return prompts added at the MHA and MLP stages. Each hook receives the
    residual stream as it stands at the start of its stage.
    """

    entry: Hook = None
    attn: Hook = None
    mlp: Hook = None


def _apply_hook(hook: Hook, x: Tensor, stage: str) -> Tensor | None:
    if hook is None:
        return None
    out = hook(x)
    if out.shape != x.shape:
        raise ShapeError(f"{stage} hook returned {out.shape}, expected {x.shape}")
    return out


def block_forward(x: Tensor, block: Block, hooks: AdapterHooks | None = None) -> Tensor:
    hooks = hooks or AdapterHooks()
    delta = _apply_hook(hooks.entry, x, "entry")
    if delta is not None:
        x = x + delta
    prompt = _apply_hook(hooks.attn, x, "attn")
    x = x + block.attn_branch(x)
    if prompt is not None:
        x = x + prompt
    prompt = _apply_hook(hooks.mlp, x, "mlp")
    x = x + block.mlp_branch(x)
    if prompt is not None:
        x = x + prompt
    return x


def patch_embed(images, w: Tensor, b: Tensor, patch: int) -> Tensor:
    """Non-overlapping ``patch`` x ``patch`` patches projected to width C.

    ``images`` is (H, W, ch) or (B, H, W, ch); the result is (N, C) or
    (B, N, C) with patches in row-major order.
    """
    arr = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4:
        raise ShapeError(f"patch_embed expects (B,H,W,ch) images, got {arr.shape}")
    bsz, h, wd, ch = arr.shape
    if h % patch or wd % patch:
        raise ShapeError(f"patch size {patch} does not divide image {h}x{wd}")
    gh, gw = h // patch, wd // patch
    patches = arr.reshape(bsz, gh, patch, gw, patch, ch).transpose(0, 1, 3, 2, 4, 5)
    patches = patches.reshape(bsz, gh * gw, patch * patch * ch)
    if w.shape[0] != patches.shape[-1]:
        raise ShapeError(f"patch weight {w.shape} does not match patch vector {patches.shape[-1]}")
    out = T.linear(Tensor(patches), w, b)
    return out[0] if single else out


def add_position(tokens: Tensor, layout: TokenLayout, pos_z: Tensor, pos_x: Tensor) -> Tensor:
    """Add the single template embedding to every memory frame, then the search one."""
    layout.check(tokens)
    if pos_z.shape != (layout.n_z, layout.dim) or pos_x.shape != (layout.n_x, layout.dim):
        raise ShapeError(f"positional embeddings {pos_z.shape}/{pos_x.shape} do not match layout")
    pos = T.concat([pos_z] * layout.T + [pos_x], axis=0)
    return tokens + pos


def build_token_sequence(memory_tokens: Sequence[Tensor], search_tokens: Tensor) -> tuple[Tensor, TokenLayout]:
    """Concatenate template frames (oldest first) and the search tokens."""
    if len(memory_tokens) == 0:
        raise ShapeError("template memory must hold at least one frame")
    first = memory_tokens[0]
    n_z, c = first.shape[-2], first.shape[-1]
    for m in memory_tokens:
        if m.shape != first.shape:
            raise ShapeError(f"template token sets disagree: {m.shape} vs {first.shape}")
    if search_tokens.shape[-1] != c or search_tokens.shape[:-2] != first.shape[:-2]:
        raise ShapeError(f"search tokens {search_tokens.shape} incompatible with templates {first.shape}")
    layout = TokenLayout(T=len(memory_tokens), n_z=n_z, n_x=search_tokens.shape[-2], dim=c)
    axis = search_tokens.ndim - 2
    return T.concat(list(memory_tokens) + [search_tokens], axis=axis), layout


class Backbone:
    """Tokenizer + blocks bound to a parameter store."""

    def __init__(self, store: ParamStore, cfg: BackboneConfig):
        self.cfg = cfg
        self.patch = (store["backbone.patch.w"], store["backbone.patch.b"])
        self.pos_z = store["backbone.pos_z"]
        self.pos_x = store["backbone.pos_x"]
        self.norm = (store["backbone.norm.g"], store["backbone.norm.b"])
        self.blocks = [Block(store, i, cfg.heads) for i in range(cfg.depth)]

    def tokenize(self, memory: np.ndarray, search: np.ndarray) -> tuple[Tensor, TokenLayout]:
        """memory: (B, T, H_z, W_z, ch); search: (B, H_x, W_x, ch)."""
        if memory.ndim != 5 or search.ndim != 4:
            raise ShapeError(f"expected memory (B,T,H,W,ch) and search (B,H,W,ch), got {memory.shape}, {search.shape}")
        frames = [patch_embed(memory[:, t], *self.patch, self.cfg.patch) for t in range(memory.shape[1])]
        x, layout = build_token_sequence(frames, patch_embed(search, *self.patch, self.cfg.patch))
        return add_position(x, layout, self.pos_z, self.pos_x), layout

    def final_norm(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, *self.norm)

    def forward(self, memory: np.ndarray, search: np.ndarray,
                hooks: Sequence[AdapterHooks] | None = None) -> tuple[Tensor, TokenLayout]:
        x, layout = self.tokenize(memory, search)
        for i, block in enumerate(self.blocks):
            x = block_forward(x, block, hooks[i] if hooks else None)
        return self.final_norm(x), layout
