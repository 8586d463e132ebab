"""Dense feature volumes: sampling, the coordinate lattice, and upsampling.

Data layout is channel-major then z, y, x; voxel k of an axis is centered
at 2 (k + 0.5) / n - 1, so all centers live strictly inside (-1, 1) with
uniform spacing 2 / n.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .autodiff import Tape
from .ops import _subdivide_axis, _trilinear_weights

VOLB_MAGIC = b"VOLB"
VOLB_VERSION = 1


@dataclass
class FeatureVolume:
    """C x N^3 grid of features; immutable by convention after construction."""

    data: np.ndarray  # [C, N, N, N], float32

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 4 or not (arr.shape[1] == arr.shape[2] == arr.shape[3]):
            raise ValueError(f"volume data must be [C, N, N, N], got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume contains non-finite values")
        self.data = arr

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def resolution(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, channels: int, resolution: int) -> "FeatureVolume":
        return cls(np.zeros((channels, resolution, resolution, resolution), dtype=np.float32))

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Trilinear features at world points [P, 3] -> [P, C].

        Weighted sum over the 8 surrounding voxel centers; points inside the
        cube but beyond the outermost centers clamp to the edge; points
        outside [-1, 1]^3 return the zero vector.
        """
        return sample_volume(self.data, points)


def sample_volume(vol: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Numpy fast path shared with the differentiable op (same weight math)."""
    vol = np.asarray(vol)
    pts = np.asarray(points, dtype=vol.dtype)
    c, n = vol.shape[0], vol.shape[1]
    inside = (np.abs(pts) <= 1.0).all(axis=1)
    base, frac = _trilinear_weights(n, pts)
    bx, by, bz = base[:, 0], base[:, 1], base[:, 2]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    flat = vol.reshape(c, -1)
    idx000 = (bz * n + by) * n + bx
    out = np.zeros((pts.shape[0], c), dtype=vol.dtype)
    for dz in (0, 1):
        wz = fz if dz else 1.0 - fz
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            for dx in (0, 1):
                wx = fx if dx else 1.0 - fx
                idx = idx000 + (dz * n + dy) * n + dx
                out += flat[:, idx].T * ((wz * wy * wx) * inside)[:, None]
    return out


def voxel_centers_1d(n: int) -> np.ndarray:
    return 2.0 * (np.arange(n) + 0.5) / n - 1.0


@dataclass
class CoordinateVolume:
    """Homogeneous voxel-center positions in flat z-outer, y, x-inner order."""

    resolution: int
    positions: np.ndarray = field(init=False)  # [N^3, 4]

    def __post_init__(self):
        n = self.resolution
        if n < 1:
            raise ValueError("resolution must be >= 1")
        axis = voxel_centers_1d(n)
        z, y, x = np.meshgrid(axis, axis, axis, indexing="ij")
        pos = np.stack([x, y, z, np.ones_like(x)], axis=-1).reshape(-1, 4)
        self.positions = pos


def coordinate_volume(n: int) -> CoordinateVolume:
    return CoordinateVolume(n)


class SuperResolutionNet:
    """Residual 3-conv refinement applied after deterministic upsampling.

    Three 3x3x3 convolutions (c -> 16 -> 16 -> c) with relu between; the
    final layer is zero-initialized so a fresh net reproduces the plain
    upsample exactly.
    """

    HIDDEN = 16

    def __init__(self, channels: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        c, h = channels, self.HIDDEN
        self.channels = channels
        self.params = {
            "sr/w1": _he(rng, (h, c, 3, 3, 3)),
            "sr/b1": np.zeros(h, dtype=np.float32),
            "sr/w2": _he(rng, (h, h, 3, 3, 3)),
            "sr/b2": np.zeros(h, dtype=np.float32),
            "sr/w3": np.zeros((c, h, 3, 3, 3), dtype=np.float32),
            "sr/b3": np.zeros(c, dtype=np.float32),
        }

    def forward(self, x, p=None):
        """x: [B, C, D, H, W] tensor or array; p: bound tape params."""
        p = p if p is not None else self.params
        h = ops.relu(ops.conv3d(x, p["sr/w1"], p["sr/b1"], pad="same"))
        h = ops.relu(ops.conv3d(h, p["sr/w2"], p["sr/b2"], pad="same"))
        return ops.add(ops.conv3d(h, p["sr/w3"], p["sr/b3"], pad="same"), x)

    def bind(self, tape: Tape):
        return {k: tape.leaf(v) for k, v in self.params.items()}


def _he(rng, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def upsample(vol: FeatureVolume, factor: int = 2, mode: str = "trilinear", sr: SuperResolutionNet | None = None) -> FeatureVolume:
    """Double the spatial resolution, preserving channels.

    'trilinear' performs average-preserving linear subdivision: each voxel
    splits into 8 children placed a quarter-spacing off center along each
    axis with central-difference slopes, so sampling the result at the
    original voxel centers reproduces the original values exactly and
    affine ramps survive unchanged. 'learned' follows the subdivision with
    a small residual conv stack and requires its weights.
    """
    if mode not in ("trilinear", "learned"):
        raise ValueError(f"unknown upsample mode {mode!r}")
    if factor < 2 or factor & (factor - 1):
        raise ValueError("factor must be a power of two >= 2")
    data = vol.data
    while factor > 1:
        for ax in (1, 2, 3):
            data = _subdivide_axis(data, ax)
        factor //= 2
    if mode == "learned":
        if sr is None:
            raise ValueError("learned upsample mode requires trained super-resolution weights")
        if sr.channels != vol.channels:
            raise ValueError(f"super-resolution net has {sr.channels} channels, volume has {vol.channels}")
        data = sr.forward(data[None]).data[0]
    return FeatureVolume(np.ascontiguousarray(data))


def save_volume(path, vol: FeatureVolume) -> None:
    """VOLB container: magic, version u32, n u32, c u32, float32 LE payload."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(VOLB_MAGIC)
        f.write(struct.pack("<III", VOLB_VERSION, vol.resolution, vol.channels))
        f.write(np.ascontiguousarray(vol.data, dtype="<f4").tobytes())


def load_volume(path) -> FeatureVolume:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(4) != VOLB_MAGIC:
            raise ValueError(f"{path}: not a volume file")
        version, n, c = struct.unpack("<III", f.read(12))
        if version != VOLB_VERSION:
            raise ValueError(f"{path}: unsupported volume version {version}")
        data = np.frombuffer(f.read(4 * c * n * n * n), dtype="<f4")
        return FeatureVolume(data.reshape(c, n, n, n).astype(np.float32).copy())
