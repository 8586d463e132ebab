"""Adam with bias correction and decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr,
    betas: tuple[float, float] = (0.9, 0.99),
    weight_decay: float = 0.0,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update. lr may be a float or a per-name dict.

    Params with no gradient entry are skipped (their moments stay frozen).
    Weight decay is decoupled (applied directly to params, not the moments).
    """
    if lr is None or (not isinstance(lr, dict) and lr <= 0):
        raise ValueError("lr must be positive")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError("adam_step", [p.shape, g.shape], f"param {name!r}")
        step_lr = lr[name] if isinstance(lr, dict) else float(lr)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mh = m / c1
        vh = v / c2
        if weight_decay > 0.0:
            p -= step_lr * weight_decay * p
        p -= step_lr * mh / (np.sqrt(vh) + eps)
