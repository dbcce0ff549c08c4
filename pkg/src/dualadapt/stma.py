"""Spatio-temporal modality adapter.

A bottleneck adapter placed at block entry. After the down-projection the
template-memory rows are regrouped per spatial token and convolved along the
memory (time) axis; search rows skip the convolution. The up-projection is
zero-initialized so a fresh adapter contributes nothing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import TokenLayout
from .params import ParamStore
from .tensor import ShapeError, Tensor

KERNEL = 3


def stma_shapes(prefix: str, dim: int, d: int, depthwise: bool = False) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.w_down": (dim, d),
        f"{prefix}.b_down": (d,),
        f"{prefix}.conv_w": (d, 1, KERNEL) if depthwise else (d, d, KERNEL),
        f"{prefix}.conv_b": (d,),
        f"{prefix}.w_up": (d, dim),
        f"{prefix}.b_up": (dim,),
    }


@dataclass
class StmaParams:
    w_down: Tensor
    b_down: Tensor
    conv_w: Tensor
    conv_b: Tensor
    w_up: Tensor
    b_up: Tensor
    modality: str = "rgb"
    layer: int = 0
    depthwise: bool = False

    @property
    def d(self) -> int:
        return self.w_down.shape[1]

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, modality: str, layer: int,
                   depthwise: bool = False) -> "StmaParams":
        return cls(store[f"{prefix}.w_down"], store[f"{prefix}.b_down"],
                   store[f"{prefix}.conv_w"], store[f"{prefix}.conv_b"],
                   store[f"{prefix}.w_up"], store[f"{prefix}.b_up"],
                   modality=modality, layer=layer, depthwise=depthwise)


def init_stma(store: ParamStore, prefix: str, dim: int, d: int, rng: np.random.Generator,
              modality: str, layer: int, depthwise: bool = False) -> StmaParams:
    for name, shape in stma_shapes(prefix, dim, d, depthwise).items():
        if name.endswith(("w_up", "b_up", "b_down", "conv_b")):
            value = np.zeros(shape)
        elif name.endswith("conv_w"):
            fan_in = shape[1] * shape[2]
            value = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
        else:
            value = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
        store.add(name, value, trainable=True)
    return StmaParams.from_store(store, prefix, modality, layer, depthwise)


def split_tokens(x_down: Tensor, layout: TokenLayout) -> tuple[Tensor, Tensor]:
    """Leading T*N_z rows are the memory; trailing N_x rows the search region."""
    if x_down.ndim != 3 or x_down.shape[1] != layout.total:
        raise ShapeError(f"split_tokens: {x_down.shape} does not match {layout.total} tokens")
    cut = layout.search_offset
    return x_down[:, :cut, :], x_down[:, cut:, :]


def temporal_reshape(x_z: Tensor, layout: TokenLayout) -> Tensor:
    """(B, T*N_z, d) -> (B*N_z, d, T); element (b, t*N_z+n, c) lands at (b*N_z+n, c, t)."""
    bsz, rows, d = x_z.shape
    if rows != layout.T * layout.n_z:
        raise ShapeError(f"temporal_reshape: {rows} rows for T={layout.T}, N_z={layout.n_z}")
    return x_z.reshape(bsz, layout.T, layout.n_z, d).transpose(0, 2, 3, 1).reshape(bsz * layout.n_z, d, layout.T)


def temporal_unreshape(x: Tensor, layout: TokenLayout) -> Tensor:
    """Inverse of :func:`temporal_reshape`."""
    rows, d, t = x.shape
    if t != layout.T or rows % layout.n_z:
        raise ShapeError(f"temporal_unreshape: {x.shape} vs T={layout.T}, N_z={layout.n_z}")
    bsz = rows // layout.n_z
    return x.reshape(bsz, layout.n_z, d, t).transpose(0, 3, 1, 2).reshape(bsz, t * layout.n_z, d)


def stma_forward(x: Tensor, params: StmaParams, layout: TokenLayout) -> Tensor:
    """Residual delta for block entry: up(concat(X_z + conv(X_z), X_x))."""
    layout.check(x)
    x_down = T.linear(x, params.w_down, params.b_down)
    x_z, x_x = split_tokens(x_down, layout)
    z = temporal_reshape(x_z, layout)
    z = z + T.conv1d(z, params.conv_w, params.conv_b, depthwise=params.depthwise)
    x_z = temporal_unreshape(z, layout)
    return T.linear(T.concat([x_z, x_x], axis=1), params.w_up, params.b_up)
