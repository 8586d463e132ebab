"""Ray-marching rendering of feature volumes and analytic scenes.

Quadrature is emission-absorption with alpha = 1 - exp(-sigma * delta) on
uniform stratified bins; delta is the fixed bin width, which makes the
constant-density chord opacity exact at any sample count. Stratification
jitter is keyed per (seed, ray index, sample index), so images are
deterministic under any pixel scheduling and rays never interact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tape, Tensor
from .camera import CameraPose, Intrinsics, Ray, rays_for_pixels
from .rng import counter_uniform, derive_seed
from .scenes import BAKE_SCALE, BAKE_SHIFT, SceneSpec, first_hit
from .volume import FeatureVolume

# raw MLP density output is shifted before softplus so that zero features
# decode to (numerically) transparent space
DENSITY_SHIFT = 8.0

PSNR_CAP = 99.0


@dataclass
class RenderConfig:
    samples_per_ray: int = 64
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    jitter: bool = True
    chunk_rays: int = 8192

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")


def _he(rng, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class DecoderMLP:
    """Shared decoder: interpolated features -> density logit + color logits.

    Five fully connected layers with hidden width 64. Density goes through
    a shifted softplus (so zero features are transparent), color through a
    sigmoid. The final layer starts near zero to keep fresh volumes empty.
    """

    LAYERS = 5
    HIDDEN = 64

    def __init__(self, channels: int, seed: int = 0):
        rng = np.random.default_rng(derive_seed(seed, "decoder-init"))
        dims = [channels] + [self.HIDDEN] * (self.LAYERS - 1) + [4]
        self.channels = channels
        self.params: dict[str, np.ndarray] = {}
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            scale = 1e-2 if i == self.LAYERS - 1 else None
            w = (rng.standard_normal((din, dout)) * (scale or np.sqrt(2.0 / din))).astype(np.float32)
            self.params[f"decoder/w{i}"] = w
            self.params[f"decoder/b{i}"] = np.zeros(dout, dtype=np.float32)

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        return {k: tape.leaf(v) for k, v in self.params.items()}

    def forward_raw(self, feats, p=None) -> Tensor:
        """[P, C] features -> [P, 4] raw outputs; works on or off tape."""
        p = p if p is not None else self.params
        h = feats
        for i in range(self.LAYERS):
            h = ops.add(ops.matmul(h, p[f"decoder/w{i}"]), p[f"decoder/b{i}"])
            if i < self.LAYERS - 1:
                h = ops.relu(h)
        return h

    def decode(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raw = self.forward_raw(np.asarray(feats, dtype=np.float32)).data
        sigma = np.logaddexp(0.0, raw[:, 0] - DENSITY_SHIFT)
        rgb = 1.0 / (1.0 + np.exp(-raw[:, 1:4]))
        return sigma, rgb


class BakedVolumeDecoder:
    """Identity-style decoder for baked ground-truth volumes.

    Channel 0 is a density logit (see scenes.bake_volume); channels 1..3
    are colors stored directly and clamped on the way out.
    """

    def decode(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        feats = np.asarray(feats, dtype=np.float64)
        sigma = np.logaddexp(0.0, BAKE_SCALE * feats[:, 0] - BAKE_SHIFT)
        rgb = np.clip(feats[:, 1:4], 0.0, 1.0)
        return sigma, rgb


def sample_positions(t0: np.ndarray, t1: np.ndarray, samples: int, seed: int, ray_index: np.ndarray, jitter: bool):
    """Stratified sample distances [R, S] plus the per-ray bin width [R]."""
    r = t0.shape[0]
    delta = (t1 - t0) / samples
    if jitter:
        counters = ray_index[:, None].astype(np.uint64) * np.uint64(samples) + np.arange(samples, dtype=np.uint64)
        u = counter_uniform(seed, counters)
    else:
        u = np.full((r, samples), 0.5)
    t = t0[:, None] + (np.arange(samples) + u) * delta[:, None]
    return t, delta


def composite(sigma: np.ndarray, rgb: np.ndarray, t: np.ndarray, delta: np.ndarray, background):
    """Emission-absorption quadrature over [R, S] samples.

    Returns rgb [R, 3], opacity [R], expected depth [R].
    """
    tau = sigma * delta[:, None]
    accum = np.cumsum(tau, axis=1)
    trans = np.exp(-(accum - tau))  # transmittance before each bin
    alpha = -np.expm1(-tau)
    w = trans * alpha
    opacity = w.sum(axis=1)
    t_final = np.exp(-accum[:, -1])
    out = (w[:, :, None] * rgb).sum(axis=1) + t_final[:, None] * np.asarray(background)
    depth = (w * t).sum(axis=1) / np.maximum(opacity, 1e-8)
    return out, opacity, depth


def render_rays(vol: FeatureVolume, decoder, origins, dirs, t0, t1, config: RenderConfig, ray_index=None):
    """Batch ray rendering; rays that miss the cube return pure background."""
    r = origins.shape[0]
    if ray_index is None:
        ray_index = np.arange(r)
    rgb_out = np.tile(np.asarray(config.background, dtype=np.float64), (r, 1))
    opacity = np.zeros(r)
    depth = np.zeros(r)
    hit = t1 > t0
    if hit.any():
        seed = derive_seed(config.seed, "strata")
        t, delta = sample_positions(t0[hit], t1[hit], config.samples_per_ray, seed, ray_index[hit], config.jitter)
        pts = origins[hit][:, None, :] + t[:, :, None] * dirs[hit][:, None, :]
        feats = vol.sample(pts.reshape(-1, 3).astype(np.float32))
        sigma, rgb = decoder.decode(feats)
        sigma = sigma.reshape(t.shape)
        rgb = rgb.reshape(t.shape + (3,))
        rgb_out[hit], opacity[hit], depth[hit] = composite(sigma, rgb, t, delta, config.background)
    return rgb_out, opacity, depth


def render_ray(vol: FeatureVolume, decoder, ray: Ray, config: RenderConfig, ray_index: int = 0):
    """Single-ray convenience wrapper: returns (rgb [3], opacity, expected depth)."""
    rgb, opacity, depth = render_rays(
        vol,
        decoder,
        ray.origin[None],
        ray.direction[None],
        np.array([ray.t_near]),
        np.array([ray.t_far]),
        config,
        np.array([ray_index]),
    )
    return rgb[0], float(opacity[0]), float(depth[0])


def render_image(vol: FeatureVolume, decoder, pose: CameraPose, intr: Intrinsics, config: RenderConfig):
    """Per-pixel rendering -> (rgb [H, W, 3], expected-depth [H, W])."""
    w, h = intr.width, intr.height
    px, py = np.meshgrid(np.arange(w), np.arange(h))
    px = px.ravel()
    py = py.ravel()
    rgb = np.empty((h * w, 3))
    opacity = np.empty(h * w)
    depth = np.empty(h * w)
    origins, dirs, t0, t1 = rays_for_pixels(pose, intr, px, py)
    idx = np.arange(h * w)
    for lo in range(0, h * w, config.chunk_rays):
        sl = slice(lo, min(lo + config.chunk_rays, h * w))
        rgb[sl], opacity[sl], depth[sl] = render_rays(
            vol, decoder, origins[sl], dirs[sl], t0[sl], t1[sl], config, idx[sl]
        )
    return rgb.reshape(h, w, 3), depth.reshape(h, w)


def render_analytic(scene: SceneSpec, pose: CameraPose, intr: Intrinsics, config: RenderConfig):
    """Reference render straight from the scene's analytic fields.

    Color uses the same quadrature as volume rendering; depth is the
    analytic first-surface distance with 0 marking background pixels.
    """
    w, h = intr.width, intr.height
    px, py = np.meshgrid(np.arange(w), np.arange(h))
    px = px.ravel()
    py = py.ravel()
    origins, dirs, t0, t1 = rays_for_pixels(pose, intr, px, py)
    rgb_out = np.tile(np.asarray(config.background, dtype=np.float64), (h * w, 1))
    depth_out = np.zeros(h * w)
    hit = t1 > t0
    if hit.any() and scene.primitives:
        seed = derive_seed(config.seed, "strata")
        idx = np.arange(h * w)
        t, delta = sample_positions(t0[hit], t1[hit], config.samples_per_ray, seed, idx[hit], config.jitter)
        pts = origins[hit][:, None, :] + t[:, :, None] * dirs[hit][:, None, :]
        dens, color = scene.fields_at(pts.reshape(-1, 3))
        sigma = dens.reshape(t.shape)
        rgb = color.reshape(t.shape + (3,))
        rgb_out[hit], _, _ = composite(sigma, rgb, t, delta, config.background)
        t_hit = first_hit(scene, origins[hit], dirs[hit])
        depth_out[hit] = np.where(np.isfinite(t_hit), t_hit, 0.0)
    return rgb_out.reshape(h, w, 3), depth_out.reshape(h, w)


def render_rays_tape(
    vol_t: Tensor,
    decoder: DecoderMLP,
    decoder_params,
    origins,
    dirs,
    t0,
    t1,
    config: RenderConfig,
    ray_index=None,
) -> Tensor:
    """Differentiable version of render_rays for training.

    vol_t is a [C, N, N, N] tensor on a tape; returns the composited rgb
    [R, 3] as a tensor on the same tape. Rays must all hit the cube
    (callers filter misses, which contribute constant background loss).
    Gradients flow into the volume and the decoder parameters only; sample
    positions are fixed inputs.
    """
    dtype = vol_t.data.dtype
    r = origins.shape[0]
    s = config.samples_per_ray
    if ray_index is None:
        ray_index = np.arange(r)
    seed = derive_seed(config.seed, "strata")
    t, delta = sample_positions(t0, t1, s, seed, ray_index, config.jitter)
    pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    feats = ops.trilinear_sample(vol_t, pts.reshape(-1, 3).astype(dtype))
    raw = decoder.forward_raw(feats, decoder_params)
    sigma = ops.softplus(ops.sub(ops.reshape(ops.slice_(raw, 1, 0, 1), (r, s)), dtype.type(DENSITY_SHIFT)))
    rgb = ops.sigmoid(ops.reshape(ops.slice_(raw, 1, 1, 4), (r, s, 3)))
    tau = ops.mul(sigma, delta[:, None].astype(dtype))
    # exclusive prefix sums via a fixed strictly-upper-triangular matrix
    strict_upper = np.triu(np.ones((s, s), dtype=dtype), k=1)
    before = ops.matmul(tau, strict_upper)
    trans = ops.exp(ops.scale(before, -1.0))
    alpha = ops.sub(dtype.type(1.0), ops.exp(ops.scale(tau, -1.0)))
    w = ops.mul(trans, alpha)
    t_final = ops.exp(ops.scale(ops.sum_(tau, axis=1, keepdims=True), -1.0))
    bg = np.asarray(config.background, dtype=dtype)
    fg = ops.sum_(ops.mul(ops.reshape(w, (r, s, 1)), rgb), axis=1)
    return ops.add(fg, ops.mul(t_final, bg))


# ---------------------------------------------------------------------------
# image metrics


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for unit-range images, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    x = np.arange(window) - half
    g = np.exp(-(x**2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", win, kernel)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Gaussian-windowed SSIM on the channel-mean grayscale, unit dynamic range."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.mean(axis=2)
        b = b.mean(axis=2)
    if min(a.shape) < window:
        raise ValueError(f"ssim: image {a.shape} smaller than {window}x{window} window")
    kernel = _gaussian_kernel(window, sigma)
    c1 = 0.01**2
    c2 = 0.03**2
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    var_a = _windowed_mean(a * a, kernel) - mu_a**2
    var_b = _windowed_mean(b * b, kernel) - mu_b**2
    cov = _windowed_mean(a * b, kernel) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
