"""Shared fixtures: tiny model geometries and a finite-difference helper."""
from __future__ import annotations

import numpy as np
import pytest

from dualadapt.backbone import BackboneConfig
from dualadapt.gradcheck import grad_check
from dualadapt.model import Batch, ModelConfig
from dualadapt.params import ParamStore


TINY_BACKBONE = BackboneConfig(depth=1, dim=16, heads=2, patch=4, template_size=(8, 8), search_size=(16, 16))
SMALL_BACKBONE = BackboneConfig(depth=2, dim=16, heads=2, patch=4, template_size=(16, 16), search_size=(32, 32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(backbone=TINY_BACKBONE, memory_size=2, stma_d_rgb=4, stma_d_x=4,
                       shallow_h=4, deep_d=2, seed=3)


@pytest.fixture
def small_config():
    return ModelConfig(backbone=SMALL_BACKBONE, memory_size=3, stma_d_rgb=4, stma_d_x=4,
                       shallow_h=4, deep_d=2, seed=5)


def random_batch(config: ModelConfig, rng: np.random.Generator, bsz: int = 2, boxes: bool = True) -> Batch:
    bb = config.backbone
    t = config.memory_size
    z, x = bb.template_size[0], bb.search_size[0]
    box = np.column_stack([rng.uniform(0.3, 0.7, bsz), rng.uniform(0.3, 0.7, bsz),
                           rng.uniform(0.15, 0.35, bsz), rng.uniform(0.15, 0.35, bsz)])
    return Batch(rng.random((bsz, t, z, z, 3)), rng.random((bsz, t, z, z, 3)),
                 rng.random((bsz, x, x, 3)), rng.random((bsz, x, x, 3)), box if boxes else None)


def check_op_gradients(op, shapes, rng, tol=1e-6, positive=False, **kwargs):
    """grad_check of sum(op(*inputs) * R) for fixed random R; returns max rel error."""
    store = ParamStore()
    for i, s in enumerate(shapes):
        v = rng.uniform(0.5, 1.5, s) if positive else rng.normal(0.0, 1.0, s)
        store.add(f"in{i}", v, trainable=True)
    out_shape = op(*[store[f"in{i}"] for i in range(len(shapes))], **kwargs).shape
    weights = rng.normal(0.0, 1.0, out_shape)

    def loss():
        return (op(*[store[f"in{i}"] for i in range(len(shapes))], **kwargs) * weights).sum()

    err = grad_check(loss, store)
    assert err < tol, f"max relative error {err:.3e}"
    return err
