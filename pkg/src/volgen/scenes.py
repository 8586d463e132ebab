"""Procedural primitive scenes: analytic density/color fields, ray hits,
caption generation, and ground-truth volume baking.

These scenes stand in for real scanned objects: every field is known in
closed form, so renders and volumes have independent references.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import make_generator
from .volume import FeatureVolume, voxel_centers_1d

KINDS = ("sphere", "box", "cylinder", "torus")

# channel-0 encoding of baked volumes: density = softplus(BAKE_SCALE * f - BAKE_SHIFT)
BAKE_SCALE = 36.0
BAKE_SHIFT = 11.0
DEFAULT_DENSITY = 25.0

PALETTE = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.70, 0.15),
    "blue": (0.15, 0.20, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "orange": (0.95, 0.55, 0.10),
    "purple": (0.55, 0.15, 0.75),
    "cyan": (0.10, 0.75, 0.80),
}

KIND_WORDS = {"sphere": "sphere", "box": "cube", "cylinder": "cylinder", "torus": "torus"}


@dataclass(frozen=True)
class Primitive:
    """One solid. size is kind-specific:

    sphere (radius,), box (hx, hy, hz) half extents,
    cylinder (radius, half_height) on a vertical axis,
    torus (major_radius, minor_radius) on a vertical axis.
    """

    kind: str
    center: tuple[float, float, float]
    size: tuple[float, ...]
    color: tuple[float, float, float]
    density: float = DEFAULT_DENSITY

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if any(not (0.0 <= c <= 1.0) for c in self.color):
            raise ValueError("color components must lie in [0, 1]")
        r = self.bounding_radius
        if any(abs(c) + r > 1.0 + 1e-9 for c in self.center):
            raise ValueError("primitive extends outside the [-1, 1] cube")

    @property
    def bounding_radius(self) -> float:
        s = self.size
        if self.kind == "sphere":
            return s[0]
        if self.kind == "box":
            return float(np.linalg.norm(s))
        if self.kind == "cylinder":
            return float(np.hypot(s[0], s[1]))
        return s[0] + s[1]

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Vectorized inside test for [P, 3] points."""
        d = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        s = self.size
        if self.kind == "sphere":
            return (d * d).sum(axis=-1) <= s[0] ** 2
        if self.kind == "box":
            return (np.abs(d) <= np.asarray(s)).all(axis=-1)
        if self.kind == "cylinder":
            radial = np.hypot(d[..., 0], d[..., 2])
            return (radial <= s[0]) & (np.abs(d[..., 1]) <= s[1])
        radial = np.hypot(d[..., 0], d[..., 2])
        return (radial - s[0]) ** 2 + d[..., 1] ** 2 <= s[1] ** 2


@dataclass
class SceneSpec:
    """Max-density union of primitives, plus an optional caption."""

    primitives: list[Primitive] = field(default_factory=list)
    caption: str = ""

    def density_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros(pts.shape[0])
        for prim in self.primitives:
            inside = prim.contains(pts)
            out = np.where(inside & (prim.density > out), prim.density, out)
        return out

    def fields_at(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Density [P] and color [P, 3]; color follows the max-density primitive."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dens = np.zeros(pts.shape[0])
        color = np.zeros((pts.shape[0], 3))
        for prim in self.primitives:
            take = prim.contains(pts) & (prim.density > dens)
            dens[take] = prim.density
            color[take] = prim.color
        return dens, color

    def to_json(self) -> dict:
        return {
            "caption": self.caption,
            "primitives": [
                {
                    "kind": p.kind,
                    "center": [float(v) for v in p.center],
                    "size": [float(v) for v in p.size],
                    "color": [float(v) for v in p.color],
                    "density": float(p.density),
                }
                for p in self.primitives
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SceneSpec":
        prims = [
            Primitive(
                kind=p["kind"],
                center=tuple(p["center"]),
                size=tuple(p["size"]),
                color=tuple(p["color"]),
                density=float(p["density"]),
            )
            for p in obj["primitives"]
        ]
        return cls(primitives=prims, caption=obj.get("caption", ""))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# ray intersection (first analytic surface hit)


def _hit_sphere(prim, o, d):
    c = np.asarray(prim.center)
    r = prim.size[0]
    oc = o - c
    b = (oc * d).sum(axis=-1)
    disc = b * b - ((oc * oc).sum(axis=-1) - r * r)
    t = np.full(o.shape[0], np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    near = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
    t[ok] = near[ok]
    return t


def _hit_box(prim, o, d):
    c = np.asarray(prim.center)
    half = np.asarray(prim.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        lo = (c - half - o) * inv
        hi = (c + half - o) * inv
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    parallel = np.abs(d) < 1e-12
    inside = np.abs(o - c) <= half
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    t0 = lo.max(axis=-1)
    t1 = hi.min(axis=-1)
    # entry face from outside; exit face when the origin is inside the box
    return np.where((t1 >= t0) & (t1 > 1e-9), np.where(t0 > 1e-9, t0, t1), np.inf)


def _hit_cylinder(prim, o, d):
    c = np.asarray(prim.center)
    r, hh = prim.size
    oc = o - c
    # side surface: quadratic in the xz-plane
    a = d[:, 0] ** 2 + d[:, 2] ** 2
    b = oc[:, 0] * d[:, 0] + oc[:, 2] * d[:, 2]
    q = oc[:, 0] ** 2 + oc[:, 2] ** 2 - r * r
    t = np.full(o.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - a * q
        sq = np.sqrt(np.maximum(disc, 0.0))
        for root in ((-b - sq) / a, (-b + sq) / a):
            y = oc[:, 1] + root * d[:, 1]
            ok = (disc >= 0) & (a > 1e-12) & (root > 1e-9) & (np.abs(y) <= hh)
            t = np.where(ok & (root < t), root, t)
        # caps
        for ycap in (-hh, hh):
            tc = (ycap - oc[:, 1]) / np.where(np.abs(d[:, 1]) < 1e-12, np.nan, d[:, 1])
            xz = oc[:, [0, 2]] + tc[:, None] * d[:, [0, 2]]
            ok = np.isfinite(tc) & (tc > 1e-9) & ((xz**2).sum(axis=1) <= r * r)
            t = np.where(ok & (tc < t), tc, t)
    return t


def _hit_torus(prim, o, d):
    """March + bisection on the implicit torus function (no closed form used)."""
    c = np.asarray(prim.center)
    rr, sr = prim.size
    bound = prim.bounding_radius

    def implicit(t):
        p = o + t[:, None] * d - c
        radial = np.hypot(p[:, 0], p[:, 2])
        return (radial - rr) ** 2 + p[:, 1] ** 2 - sr * sr

    oc = o - c
    b = (oc * d).sum(axis=-1)
    disc = b * b - ((oc * oc).sum(axis=-1) - bound * bound)
    t_lo = np.maximum(-b - np.sqrt(np.maximum(disc, 0.0)), 1e-9)
    t_hi = -b + np.sqrt(np.maximum(disc, 0.0))
    active = disc > 0
    steps = 192
    t = np.full(o.shape[0], np.inf)
    span = np.where(active, t_hi - t_lo, 0.0)
    prev_t = t_lo.copy()
    prev_f = implicit(prev_t)
    found = np.zeros(o.shape[0], dtype=bool)
    lo = np.zeros_like(t_lo)
    hi = np.zeros_like(t_lo)
    for k in range(1, steps + 1):
        cur_t = t_lo + span * (k / steps)
        cur_f = implicit(cur_t)
        crossing = active & ~found & (prev_f > 0) & (cur_f <= 0)
        lo = np.where(crossing, prev_t, lo)
        hi = np.where(crossing, cur_t, hi)
        found |= crossing
        prev_t, prev_f = cur_t, cur_f
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        fm = implicit(mid)
        neg = fm <= 0
        hi = np.where(found & neg, mid, hi)
        lo = np.where(found & ~neg, mid, lo)
    t[found] = 0.5 * (lo + hi)[found]
    return t


_HITTERS = {"sphere": _hit_sphere, "box": _hit_box, "cylinder": _hit_cylinder, "torus": _hit_torus}


def first_hit(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance along unit rays to the nearest primitive surface; inf = miss."""
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    t = np.full(o.shape[0], np.inf)
    for prim in scene.primitives:
        t = np.minimum(t, _HITTERS[prim.kind](prim, o, d))
    return t


# ---------------------------------------------------------------------------
# volume baking


def density_to_logit(density: np.ndarray) -> np.ndarray:
    """Inverse of the baked-channel decoder softplus(BAKE_SCALE*f - BAKE_SHIFT)."""
    density = np.asarray(density, dtype=np.float64)
    out = np.zeros_like(density)
    pos = density > 0
    d = density[pos]
    softplus_inv = d + np.log1p(-np.exp(-d))
    out[pos] = (softplus_inv + BAKE_SHIFT) / BAKE_SCALE
    return out


def bake_volume(scene: SceneSpec, n: int, channels: int = 4, supersample: int = 2) -> FeatureVolume:
    """Ground-truth feature volume: channel 0 holds the density logit
    (averaged over supersampled subvoxel points), channels 1..3 the mean
    interior color. Empty space bakes to exactly zero on every channel.
    """
    if n < 4:
        raise ValueError("bake resolution must be >= 4")
    if channels < 4:
        raise ValueError("baked volumes need >= 4 channels")
    centers = voxel_centers_1d(n)
    z, y, x = np.meshgrid(centers, centers, centers, indexing="ij")
    base = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    spacing = 2.0 / n
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    logit_acc = np.zeros(base.shape[0])
    color_acc = np.zeros((base.shape[0], 3))
    count_acc = np.zeros(base.shape[0])
    for oz in offs:
        for oy in offs:
            for ox in offs:
                pts = base + np.array([ox, oy, oz]) * spacing
                dens, color = scene.fields_at(pts)
                logit_acc += density_to_logit(dens)
                inside = dens > 0
                color_acc[inside] += color[inside]
                count_acc += inside
    subcount = supersample**3
    f0 = logit_acc / subcount
    color = color_acc / np.maximum(count_acc, 1.0)[:, None]
    data = np.zeros((channels, n, n, n), dtype=np.float32)
    data[0] = f0.reshape(n, n, n).astype(np.float32)
    for ch in range(3):
        data[1 + ch] = color[:, ch].reshape(n, n, n).astype(np.float32)
    return FeatureVolume(data)


# ---------------------------------------------------------------------------
# procedural generation


def _make_primitive(rng: np.random.Generator, color_name: str, kind: str, center, shrink: float) -> Primitive:
    if kind == "sphere":
        size = (float(rng.uniform(0.25, 0.45)) * shrink,)
    elif kind == "box":
        size = tuple(float(v) * shrink for v in rng.uniform(0.2, 0.4, size=3))
    elif kind == "cylinder":
        size = (float(rng.uniform(0.15, 0.3)) * shrink, float(rng.uniform(0.25, 0.45)) * shrink)
    else:
        major = float(rng.uniform(0.28, 0.42)) * shrink
        size = (major, float(rng.uniform(0.08, 0.16)) * shrink)
    prim = Primitive(kind=kind, center=(0.0, 0.0, 0.0), size=size, color=PALETTE[color_name])
    r = prim.bounding_radius
    lim = max(1.0 - r - 0.02, 0.0)
    center = tuple(float(np.clip(c, -lim, lim)) for c in center)
    return Primitive(kind=kind, center=center, size=size, color=PALETTE[color_name])


def _relation(a: Primitive, b: Primitive) -> str:
    dy = a.center[1] - b.center[1]
    if dy > 0.15:
        return "above"
    if dy < -0.15:
        return "below"
    return "beside"


def scene_gen(seed: int, count: int, complexity: int = 1) -> list[SceneSpec]:
    """Deterministic scenes with captions naming each primitive's color and kind."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if complexity < 1:
        raise ValueError("complexity must be >= 1")
    scenes = []
    color_names = sorted(PALETTE)
    for i in range(count):
        rng = make_generator(seed, "scene", i)
        names = list(rng.choice(color_names, size=complexity, replace=False))
        kinds = [KINDS[int(k)] for k in rng.integers(0, len(KINDS), size=complexity)]
        shrink = 1.0 if complexity == 1 else 0.62
        prims: list[Primitive] = []
        for j in range(complexity):
            if j == 0:
                center = tuple(rng.uniform(-0.12, 0.12, size=3))
            else:
                axis = int(rng.integers(0, 2))  # 0: vertical stack, 1: side by side
                offset = float(rng.uniform(0.45, 0.6)) * (1 if rng.random() < 0.5 else -1)
                center = list(prims[0].center)
                center[1 if axis == 0 else 0] += offset
                center = tuple(center)
            prims.append(_make_primitive(rng, names[j], kinds[j], center, shrink))
        parts = [f"a {names[0]} {KIND_WORDS[kinds[0]]}"]
        for j in range(1, complexity):
            parts.append(f"{_relation(prims[j - 1], prims[j])} a {names[j]} {KIND_WORDS[kinds[j]]}")
        scenes.append(SceneSpec(primitives=prims, caption=" ".join(parts)))
    return scenes
