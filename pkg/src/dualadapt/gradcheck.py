"""Central finite-difference check of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .params import ParamStore
from .tensor import NonFiniteError, Tensor, no_grad


def _loss_value(loss_fn: Callable[[], Tensor]) -> float:
    with no_grad():
        value = float(loss_fn().data)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss is not finite: {value}")
    return value


def grad_check_report(
    loss_fn: Callable[[], Tensor],
    params: ParamStore,
    eps: float = 1e-5,
    names: Iterable[str] | None = None,
) -> dict[str, float]:
    """Max relative error per trainable parameter.

    The relative error of one scalar is |a - n| / max(|a|, |n|, 1e-8) where
    ``a`` is the reverse-mode gradient and ``n`` the central difference.
    """
    selected = [n for n, _ in params.trainable() if names is None or n in set(names)]
    params.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"loss is not finite: {loss.data}")
    loss.backward()
    analytic = {}
    for name in selected:
        g = params[name].grad
        analytic[name] = np.zeros(params[name].shape) if g is None else g.copy()
    params.zero_grad()

    report: dict[str, float] = {}
    for name in selected:
        t = params[name]
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _loss_value(loss_fn)
            flat[i] = orig - eps
            down = _loss_value(loss_fn)
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return report


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: ParamStore,
    eps: float = 1e-5,
    names: Iterable[str] | None = None,
) -> float:
    report = grad_check_report(loss_fn, params, eps, names)
    return max(report.values()) if report else 0.0


def desk_gradcheck(seed: int = 0, eps: float = 1e-5, scale: float = 0.5) -> dict[str, float]:
    """Gradient report, grouped, for a 1-block desk model with every adapter randomized.

    Zero-initialized projections would make many adapter gradients vanish
    identically, so all adapter tensors get a fresh random draw first. A
    small ``scale`` leaves some gradients near 1e-8, where finite-difference
    roundoff dominates the relative error.
    """
    from .backbone import BackboneConfig
    from .model import Batch, ModelConfig, assemble_model, param_group
    from .train import training_loss

    cfg = ModelConfig(
        backbone=BackboneConfig(depth=1, dim=16, heads=2, patch=4, template_size=(8, 8), search_size=(16, 16)),
        memory_size=2, stma_d_rgb=4, stma_d_x=4, shallow_h=4, deep_d=2, seed=seed,
    )
    model = assemble_model(cfg)
    rng = np.random.default_rng([seed, 99])
    for name, t in model.store.trainable():
        if param_group(name) != "head":
            t.data = rng.normal(0.0, scale, t.shape)
    bsz = 2
    batch = Batch(
        rgb_memory=rng.random((bsz, 2, 8, 8, 3)), x_memory=rng.random((bsz, 2, 8, 8, 3)),
        rgb_search=rng.random((bsz, 16, 16, 3)), x_search=rng.random((bsz, 16, 16, 3)),
        boxes=np.array([[0.40, 0.55, 0.30, 0.25], [0.62, 0.35, 0.20, 0.35]]),
    )
    report = grad_check_report(lambda: training_loss(model.forward(batch), batch.boxes), model.store, eps)
    grouped: dict[str, float] = {}
    for name, err in report.items():
        g = param_group(name)
        grouped[g] = max(grouped.get(g, 0.0), err)
    return grouped
