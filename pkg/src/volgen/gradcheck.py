"""Central finite-difference gradient verification.

The 64-bit tensor mode exists for these checks; training runs in 32-bit.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape


def central_difference(f: Callable[[Sequence[np.ndarray]], float], xs: Sequence[np.ndarray], eps: float = 1e-4):
    """Central finite differences of a scalar function w.r.t. each input array."""
    xs = [np.asarray(x, dtype=np.float64).copy() for x in xs]
    grads = []
    for i, x in enumerate(xs):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gf = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = f(xs)
            flat[j] = orig - eps
            lo = f(xs)
            flat[j] = orig
            gf[j] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| normalized by the largest gradient magnitude present."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-8)
    return float(np.abs(a - b).max(initial=0.0)) / denom


def check_gradients(build: Callable, xs: Sequence[np.ndarray], eps: float = 1e-4) -> float:
    """Compare tape gradients of a scalar-valued graph against finite differences.

    build(tape, leaves) must return a scalar Tensor. Returns the worst
    max_relative_error across all inputs.
    """
    xs64 = [np.asarray(x, dtype=np.float64) for x in xs]

    def run(arrays):
        tape = Tape()
        leaves = [tape.leaf(a) for a in arrays]
        return float(build(tape, leaves).data)

    tape = Tape()
    leaves = [tape.leaf(a) for a in xs64]
    loss = build(tape, leaves)
    grads = tape.backward(loss)
    fd = central_difference(lambda arrays: run(arrays), xs64, eps=eps)
    worst = 0.0
    for leaf, g_fd in zip(leaves, fd):
        g_ad = grads.get(leaf)
        if g_ad is None:
            g_ad = np.zeros_like(g_fd)
        worst = max(worst, max_relative_error(g_ad, g_fd))
    return worst
