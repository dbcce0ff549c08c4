"""Cross-modal adapters: a shared shallow bridge and a gated pixel-wise deep adapter.

The shallow adapter maps one modality's tokens through three bias-free linear
layers and hands the result to the other branch. Its weights are shared by
both directions.

The deep adapter works in a d'-wide space per modality. At every token it
attends over exactly two key/value entries, an intra-modal one (the token
plus a learned noise embedding) and a cross-modal one (the token gated by a
softmax score for K, the other modality's token for V). Cost is linear in the
token count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParamStore
from .tensor import ShapeError, Tensor

MODALITIES = ("rgb", "x")


# ----------------------------------------------------------------------------
# shallow adapter
# ----------------------------------------------------------------------------

def shallow_shapes(prefix: str, dim: int, h: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.w_down": (dim, h), f"{prefix}.w_mid": (h, h), f"{prefix}.w_up": (h, dim)}


@dataclass
class ShallowAdapterParams:
    w_down: Tensor
    w_mid: Tensor
    w_up: Tensor
    layer: int = 0

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, layer: int) -> "ShallowAdapterParams":
        return cls(store[f"{prefix}.w_down"], store[f"{prefix}.w_mid"], store[f"{prefix}.w_up"], layer)


def init_shallow(store: ParamStore, prefix: str, dim: int, h: int, rng: np.random.Generator,
                 layer: int) -> ShallowAdapterParams:
    for name, shape in shallow_shapes(prefix, dim, h).items():
        value = np.zeros(shape) if name.endswith("w_up") else rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
        store.add(name, value, trainable=True)
    return ShallowAdapterParams.from_store(store, prefix, layer)


def shallow_adapter_forward(x_src: Tensor, params: ShallowAdapterParams) -> Tensor:
    if x_src.shape[-1] != params.w_down.shape[0]:
        raise ShapeError(f"shallow adapter: tokens of width {x_src.shape[-1]}, weights expect {params.w_down.shape[0]}")
    return T.matmul(T.matmul(T.matmul(x_src, params.w_down), params.w_mid), params.w_up)


# ----------------------------------------------------------------------------
# deep adapter
# ----------------------------------------------------------------------------

def deep_shapes(prefix: str, dim: int, d: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for m in MODALITIES:
        shapes.update({
            f"{prefix}.{m}.proj_down": (dim, d),
            f"{prefix}.{m}.w_gate": (2 * d, d),
            f"{prefix}.{m}.noise_k": (d,),
            f"{prefix}.{m}.noise_v": (d,),
            f"{prefix}.{m}.out_proj": (d, d),
            f"{prefix}.{m}.proj_up": (d, dim),
        })
    return shapes


@dataclass
class DeepBranchParams:
    proj_down: Tensor
    w_gate: Tensor
    noise_k: Tensor
    noise_v: Tensor
    out_proj: Tensor
    proj_up: Tensor


@dataclass
class DeepAdapterParams:
    rgb: DeepBranchParams
    x: DeepBranchParams
    layer: int = 0
    heads: int = 1

    @property
    def d(self) -> int:
        return self.rgb.proj_down.shape[1]

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, layer: int, heads: int = 1) -> "DeepAdapterParams":
        def branch(m):
            p = f"{prefix}.{m}"
            return DeepBranchParams(store[f"{p}.proj_down"], store[f"{p}.w_gate"], store[f"{p}.noise_k"],
                                    store[f"{p}.noise_v"], store[f"{p}.out_proj"], store[f"{p}.proj_up"])
        return cls(branch("rgb"), branch("x"), layer, heads)


def init_deep(store: ParamStore, prefix: str, dim: int, d: int, rng: np.random.Generator,
              layer: int, heads: int = 1) -> DeepAdapterParams:
    if d % heads:
        raise ShapeError(f"deep adapter width {d} not divisible by {heads} heads")
    for name, shape in deep_shapes(prefix, dim, d).items():
        if name.endswith("proj_up"):
            value = np.zeros(shape)
        elif name.endswith(("noise_k", "noise_v")):
            value = rng.normal(0.0, 0.02, shape)
        else:
            value = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
        store.add(name, value, trainable=True)
    return DeepAdapterParams.from_store(store, prefix, layer, heads)


def gate_scores(x_other: Tensor, x_self: Tensor, w_gate: Tensor) -> Tensor:
    """softmax over channels of concat(x_other, x_self) @ W_gate."""
    if x_other.shape != x_self.shape:
        raise ShapeError(f"gate_scores: {x_other.shape} vs {x_self.shape}")
    if w_gate.shape != (2 * x_self.shape[-1], x_self.shape[-1]):
        raise ShapeError(f"gate_scores: W_gate {w_gate.shape} for width {x_self.shape[-1]}")
    return T.softmax(T.matmul(T.concat([x_other, x_self], axis=-1), w_gate), axis=-1)


def build_qkv(x_self: Tensor, x_other: Tensor, score_into_self: Tensor,
              noise_k: Tensor, noise_v: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Q = x_self; K = [x_self + N^k, x_self * score]; V = [x_self + N^v, x_other].

    K and V come back as (B, N, 2, d'); entry 0 is intra-modal, entry 1 cross-modal.
    """
    if not (x_self.shape == x_other.shape == score_into_self.shape):
        raise ShapeError(f"build_qkv: {x_self.shape}, {x_other.shape}, {score_into_self.shape}")
    d = x_self.shape[-1]
    if noise_k.shape != (d,) or noise_v.shape != (d,):
        raise ShapeError(f"build_qkv: noise {noise_k.shape}/{noise_v.shape} for width {d}")
    k = T.stack([x_self + noise_k, x_self * score_into_self], axis=-2)
    v = T.stack([x_self + noise_v, x_other], axis=-2)
    return x_self, k, v


def pixelwise_mha(q: Tensor, k: Tensor, v: Tensor, out_proj: Tensor | None = None,
                  heads: int = 1) -> Tensor:
    """Per-token attention over a length-2 key/value set.

    q: (B, N, d'); k, v: (B, N, 2, d'). No token interacts with another.
    """
    if k.ndim != 4 or k.shape != v.shape or k.shape[-2] != 2 or k.shape[:2] + k.shape[3:] != q.shape:
        raise ShapeError(f"pixelwise_mha: q {q.shape}, k {k.shape}, v {v.shape}")
    bsz, n, d = q.shape
    if d % heads:
        raise ShapeError(f"pixelwise_mha: width {d} not divisible by {heads} heads")
    dh = d // heads
    qh = q.reshape(bsz, n, 1, heads, dh)
    kh = k.reshape(bsz, n, 2, heads, dh)
    vh = v.reshape(bsz, n, 2, heads, dh)
    logits = (qh * kh).sum(axis=-1) * (1.0 / math.sqrt(dh))  # (B, N, 2, heads)
    w = T.softmax(logits, axis=2)
    out = (w.reshape(bsz, n, 2, heads, 1) * vh).sum(axis=2).reshape(bsz, n, d)
    return out if out_proj is None else T.matmul(out, out_proj)


def deep_adapter_forward(x_rgb: Tensor, x_x: Tensor, params: DeepAdapterParams) -> tuple[Tensor, Tensor]:
    """Prompts (P_rgb, P_x) at full width, each to be added to its own stream."""
    if x_rgb.shape != x_x.shape:
        raise ShapeError(f"deep adapter: modality token sets differ {x_rgb.shape} vs {x_x.shape}")
    pr, px = params.rgb, params.x
    d_rgb = T.matmul(x_rgb, pr.proj_down)
    d_x = T.matmul(x_x, px.proj_down)
    # Score_{X->RGB} = softmax(concat(X_RGB, X_X) W); Score_{RGB->X} = softmax(concat(X_X, X_RGB) W)
    score_x_to_rgb = gate_scores(d_rgb, d_x, pr.w_gate)
    score_rgb_to_x = gate_scores(d_x, d_rgb, px.w_gate)
    q, k, v = build_qkv(d_rgb, d_x, score_x_to_rgb, pr.noise_k, pr.noise_v)
    p_rgb = pixelwise_mha(q, k, v, pr.out_proj, params.heads)
    q, k, v = build_qkv(d_x, d_rgb, score_rgb_to_x, px.noise_k, px.noise_v)
    p_x = pixelwise_mha(q, k, v, px.out_proj, params.heads)
    return T.matmul(p_rgb, pr.proj_up), T.matmul(p_x, px.proj_up)


def full_cross_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Token-to-token cross attention, quadratic in N. Complexity baseline only."""
    return T.attention(q, k, v, heads=1)
