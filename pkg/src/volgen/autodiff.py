"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tape records ops applied to Tensors in topological order; backward walks
the record once, accumulating gradients additively across fan-out. Tensors
default to float32; float64 exists for finite-difference gradient checks
only. Tensors are treated as immutable once recorded.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes. Carries op and shapes."""

    def __init__(self, op: str, shapes, detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnsupportedOpError(ValueError):
    """Raised when apply() is given an op kind outside the supported set."""


class Tensor:
    """Dense n-d array, optionally attached to a gradient tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None):
        self.data = np.asarray(data)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


class _Node:
    __slots__ = ("op", "parents", "backward")

    def __init__(self, op: str, parents: tuple[int, ...], backward: Callable):
        self.op = op
        self.parents = parents
        # backward: grad_out -> list of per-parent gradient arrays (None to skip)
        self.backward = backward


class Gradients:
    """Gradient lookup returned by Tape.backward, keyed by tensor or node id."""

    def __init__(self, grads: list):
        self._grads = grads

    def _key(self, key) -> int:
        if isinstance(key, Tensor):
            if key.node_id is None:
                raise KeyError("tensor is not on the tape")
            return key.node_id
        return int(key)

    def __getitem__(self, key) -> np.ndarray:
        g = self._grads[self._key(key)]
        if g is None:
            raise KeyError(f"no gradient recorded for node {self._key(key)}")
        return g

    def get(self, key, default=None):
        try:
            return self[key]
        except KeyError:
            return default

    def __contains__(self, key) -> bool:
        try:
            return self._grads[self._key(key)] is not None
        except (KeyError, IndexError):
            return False


class Tape:
    """Ordered op record; every node's parents precede it by construction."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def leaf(self, data, dtype=None) -> Tensor:
        """Register an input (parameter or watched constant) on the tape."""
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        t = Tensor(arr, self, len(self.nodes))
        self.nodes.append(_Node("leaf", (), None))
        return t

    def record(self, op: str, parents: tuple[int, ...], backward: Callable, out: np.ndarray) -> Tensor:
        t = Tensor(out, self, len(self.nodes))
        self.nodes.append(_Node(op, parents, backward))
        return t

    def backward(self, loss: Tensor) -> Gradients:
        """Gradient of a scalar loss w.r.t. every tape node reachable from it."""
        if loss.tape is not self or loss.node_id is None:
            raise ValueError("loss tensor is not on this tape")
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        for nid in range(loss.node_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward is None:
                continue
            parent_grads = node.backward(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
        return Gradients(grads)
