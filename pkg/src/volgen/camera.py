"""Camera poses, intrinsics, projection, and ray generation.

Conventions (fixed here and asserted in tests; used identically everywhere):
world is right-handed with +y up; a camera looks down its local -z axis;
the image origin is top-left with u to the right and v down; pixel (i, j)
is centered at (i + 0.5, j + 0.5); a single field of view governs the
larger image dimension and pixels are square.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraPose:
    """World-from-camera rigid transform: rotation plus camera position."""

    rotation: np.ndarray  # [3, 3]
    position: np.ndarray  # [3]

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.position, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"pose needs 3x3 rotation and 3-vector position, got {r.shape}, {t.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-5):
            raise ValueError("rotation is not orthonormal within 1e-5")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-5):
            raise ValueError("rotation determinant is not +1 within 1e-5")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "position", t)

    @property
    def matrix(self) -> np.ndarray:
        """4x4 camera-to-world matrix [R t; 0 1]."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return m

    @property
    def inverse_matrix(self) -> np.ndarray:
        """4x4 world-to-camera matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation.T
        m[:3, 3] = -self.rotation.T @ self.position
        return m

    @classmethod
    def from_matrix(cls, m) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def look_at(cls, position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> "CameraPose":
        """Camera at `position` with -z pointing at `target`."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValueError("camera position coincides with the look-at target")
        forward /= norm
        upv = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, upv)
        rnorm = np.linalg.norm(right)
        if rnorm < 1e-9:
            raise ValueError("up vector is parallel to the viewing direction")
        right /= rnorm
        true_up = np.cross(right, forward)
        r = np.stack([right, true_up, -forward], axis=1)
        return cls(r, position)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics derived from a field of view in degrees."""

    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        if not (0.0 < self.fov_deg < 180.0):
            raise ValueError(f"fov must be in (0, 180) degrees, got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def focal_px(self) -> float:
        half = math.radians(self.fov_deg) / 2.0
        return (max(self.width, self.height) / 2.0) / math.tan(half)

    @property
    def matrix(self) -> np.ndarray:
        """3x4 projection applied to camera-space homogeneous points.

        Rows yield (u*w, v*w, w) with w the positive forward depth; the
        minus signs fold in the -z viewing direction and v-down image axis.
        """
        f = self.focal_px
        cx = self.width / 2.0
        cy = self.height / 2.0
        return np.array(
            [
                [f, 0.0, -cx, 0.0],
                [0.0, -f, -cy, 0.0],
                [0.0, 0.0, -1.0, 0.0],
            ]
        )


@dataclass(frozen=True)
class Ray:
    """Origin + unit direction with entry/exit parameters against [-1,1]^3."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    @property
    def hits_volume(self) -> bool:
        return self.t_far > self.t_near


def project_point(pose: CameraPose, intr: Intrinsics, point) -> tuple[float, float, float]:
    """Project a world point; returns homogeneous pixel coords (u*w, v*w, w).

    The caller divides by w for the pixel position. w <= 0 means the point
    is at or behind the camera plane; its view contribution is then zero.
    """
    v = np.ones(4)
    v[:3] = np.asarray(point, dtype=np.float64)
    x = intr.matrix @ (pose.inverse_matrix @ v)
    return float(x[0]), float(x[1]), float(x[2])


def project_points(pose: CameraPose, intr: Intrinsics, points: np.ndarray):
    """Vectorized projection of [P, 3] world points -> (u [P], v [P], w [P]).

    u, v are already divided through by depth; entries with w <= 0 are
    left unnormalized garbage and must be masked by the caller via w.
    """
    pts = np.asarray(points, dtype=np.float64)
    hom = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    proj = hom @ (intr.matrix @ pose.inverse_matrix).T
    w = proj[:, 2]
    safe = np.where(np.abs(w) < 1e-12, 1.0, w)
    return proj[:, 0] / safe, proj[:, 1] / safe, w


def camera_distance(pose: CameraPose, point) -> float:
    """Euclidean distance between a world point and the camera position."""
    return float(np.linalg.norm(np.asarray(point, dtype=np.float64) - pose.position))


def camera_distances(pose: CameraPose, points: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(points, dtype=np.float64) - pose.position, axis=-1)


def intersect_unit_box(origin: np.ndarray, direction: np.ndarray) -> tuple[float, float]:
    """Slab intersection with [-1,1]^3; a miss returns the empty (0, 0)."""
    t0, t1 = -np.inf, np.inf
    for axis in range(3):
        d = direction[axis]
        o = origin[axis]
        if abs(d) < 1e-12:
            if abs(o) > 1.0:
                return 0.0, 0.0
            continue
        lo = (-1.0 - o) / d
        hi = (1.0 - o) / d
        if lo > hi:
            lo, hi = hi, lo
        t0 = max(t0, lo)
        t1 = min(t1, hi)
    t0 = max(t0, 0.0)
    if t1 <= t0:
        return 0.0, 0.0
    return float(t0), float(t1)


def ray_for_pixel(pose: CameraPose, intr: Intrinsics, px: int, py: int) -> Ray:
    """Ray through the center of pixel (px, py)."""
    if not (0 <= px < intr.width and 0 <= py < intr.height):
        raise ValueError(f"pixel ({px}, {py}) outside {intr.width}x{intr.height} image")
    f = intr.focal_px
    dir_cam = np.array(
        [
            (px + 0.5 - intr.width / 2.0) / f,
            -(py + 0.5 - intr.height / 2.0) / f,
            -1.0,
        ]
    )
    d = pose.rotation @ dir_cam
    d /= np.linalg.norm(d)
    t0, t1 = intersect_unit_box(pose.position, d)
    return Ray(pose.position.copy(), d, t0, t1)


def rays_for_pixels(pose: CameraPose, intr: Intrinsics, px: np.ndarray, py: np.ndarray):
    """Vectorized ray generation: origins [P,3], dirs [P,3], t_near/t_far [P]."""
    f = intr.focal_px
    dir_cam = np.stack(
        [
            (np.asarray(px, dtype=np.float64) + 0.5 - intr.width / 2.0) / f,
            -(np.asarray(py, dtype=np.float64) + 0.5 - intr.height / 2.0) / f,
            -np.ones_like(px, dtype=np.float64),
        ],
        axis=-1,
    )
    dirs = dir_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origin = pose.position
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        lo = (-1.0 - origin) * inv
        hi = (1.0 - origin) * inv
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    parallel = np.abs(dirs) < 1e-12
    inside = np.abs(origin)[None, :] <= 1.0
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    t0 = np.maximum(lo.max(axis=-1), 0.0)
    t1 = hi.min(axis=-1)
    miss = t1 <= t0
    t0 = np.where(miss, 0.0, t0)
    t1 = np.where(miss, 0.0, t1)
    origins = np.broadcast_to(origin, dirs.shape).copy()
    return origins, dirs, t0, t1


def camera_to_json(pose: CameraPose, intr: Intrinsics) -> dict:
    return {
        "pose": [float(x) for x in pose.matrix.reshape(-1)],
        "fov_deg": float(intr.fov_deg),
        "width": int(intr.width),
        "height": int(intr.height),
    }


def camera_from_json(obj: dict) -> tuple[CameraPose, Intrinsics]:
    pose = CameraPose.from_matrix(np.asarray(obj["pose"], dtype=np.float64))
    intr = Intrinsics(fov_deg=float(obj["fov_deg"]), width=int(obj["width"]), height=int(obj["height"]))
    return pose, intr


def save_cameras(path, cameras: list[tuple[CameraPose, Intrinsics]]) -> None:
    with open(path, "w") as f:
        json.dump([camera_to_json(p, i) for p, i in cameras], f, indent=1)


def load_cameras(path) -> list[tuple[CameraPose, Intrinsics]]:
    with open(path) as f:
        return [camera_from_json(o) for o in json.load(f)]
