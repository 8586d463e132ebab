"""Feature-volume sampling, coordinate lattice, and upsampling contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volgen.volume import (
    CoordinateVolume,
    FeatureVolume,
    SuperResolutionNet,
    coordinate_volume,
    load_volume,
    sample_volume,
    save_volume,
    upsample,
    voxel_centers_1d,
)

RNG = np.random.default_rng(7)


def random_volume(c=3, n=4):
    return FeatureVolume(RNG.uniform(-1, 1, size=(c, n, n, n)).astype(np.float32))


def test_sample_at_voxel_center_returns_value():
    vol = random_volume(c=2, n=4)
    centers = voxel_centers_1d(4)
    pt = np.array([[centers[1], centers[2], centers[3]]])
    got = vol.sample(pt)[0]
    assert np.allclose(got, vol.data[:, 3, 2, 1], atol=1e-6)


def test_sample_midpoint_of_eight_corners():
    vol = FeatureVolume.zeros(1, 2)
    vol.data[0] = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    got = vol.sample(np.zeros((1, 3)))[0, 0]
    assert got == pytest.approx(3.5)


def test_sample_outside_cube_is_zero():
    vol = random_volume()
    assert np.array_equal(vol.sample(np.array([[5.0, 5.0, 5.0]])), np.zeros((1, 3)))
    assert np.array_equal(vol.sample(np.array([[0.0, 1.0001, 0.0]])), np.zeros((1, 3)))


def test_sample_clamps_in_boundary_band():
    vol = random_volume(c=1, n=4)
    edge_center = voxel_centers_1d(4)[-1]  # 0.875
    inside_band = vol.sample(np.array([[0.99, 0.0, 0.0]]))
    at_edge = vol.sample(np.array([[edge_center, 0.0, 0.0]]))
    assert np.allclose(inside_band, at_edge, atol=1e-6)


def test_sample_exact_for_affine_fields():
    n = 6
    centers = voxel_centers_1d(n)
    z, y, x = np.meshgrid(centers, centers, centers, indexing="ij")
    field = (0.3 + 1.1 * x - 0.7 * y + 0.25 * z).astype(np.float32)
    vol = FeatureVolume(field[None])
    pts = RNG.uniform(-1 + 1 / n, 1 - 1 / n, size=(50, 3)).astype(np.float32)
    got = vol.sample(pts)[:, 0]
    want = 0.3 + 1.1 * pts[:, 0] - 0.7 * pts[:, 1] + 0.25 * pts[:, 2]
    assert np.allclose(got, want, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_sample_lipschitz_along_axes(seed):
    rng = np.random.default_rng(seed)
    n = 5
    vol = FeatureVolume(rng.uniform(-1, 1, size=(1, n, n, n)).astype(np.float32))
    d = vol.data[0]
    adj = max(
        np.abs(np.diff(d, axis=0)).max(),
        np.abs(np.diff(d, axis=1)).max(),
        np.abs(np.diff(d, axis=2)).max(),
    )
    lip = adj / (2.0 / n)
    p = rng.uniform(-0.9, 0.85, size=(1, 3))
    delta = 0.01
    for axis in range(3):
        q = p.copy()
        q[0, axis] += delta
        diff = abs(vol.sample(q)[0, 0] - vol.sample(p)[0, 0])
        assert diff <= lip * delta + 1e-6


def test_coordinate_volume_n1():
    cv = coordinate_volume(1)
    assert cv.positions.shape == (1, 4)
    assert np.allclose(cv.positions[0], [0.0, 0.0, 0.0, 1.0])


def test_coordinate_volume_n2():
    cv = coordinate_volume(2)
    assert cv.positions.shape == (8, 4)
    xyz = cv.positions[:, :3]
    assert np.allclose(np.abs(xyz), 0.5)
    # z varies slowest, x fastest
    assert np.allclose(cv.positions[0, :3], [-0.5, -0.5, -0.5])
    assert np.allclose(cv.positions[1, :3], [0.5, -0.5, -0.5])
    assert np.allclose(cv.positions[4, :3], [-0.5, -0.5, 0.5])


def test_coordinate_volume_spacing():
    cv = coordinate_volume(32)
    assert cv.positions[1, 0] - cv.positions[0, 0] == pytest.approx(0.0625)
    assert np.all(cv.positions[:, :3] > -1.0) and np.all(cv.positions[:, :3] < 1.0)


def test_coordinate_volume_invalid():
    with pytest.raises(ValueError):
        coordinate_volume(0)


def test_upsample_constant():
    vol = FeatureVolume(np.full((2, 3, 3, 3), 1.25, dtype=np.float32))
    up = upsample(vol)
    assert up.resolution == 6 and up.channels == 2
    assert np.allclose(up.data, 1.25)


def test_upsample_preserves_ramp():
    n = 4
    centers = voxel_centers_1d(n)
    z, y, x = np.meshgrid(centers, centers, centers, indexing="ij")
    vol = FeatureVolume((2.0 * x - 0.5).astype(np.float32)[None])
    up = upsample(vol)
    centers2 = voxel_centers_1d(2 * n)
    z2, y2, x2 = np.meshgrid(centers2, centers2, centers2, indexing="ij")
    assert np.allclose(up.data[0], 2.0 * x2 - 0.5, atol=1e-6)


def test_upsample_then_sample_original_centers_exact():
    vol = random_volume(c=2, n=4)
    up = upsample(vol)
    centers = voxel_centers_1d(4)
    z, y, x = np.meshgrid(centers, centers, centers, indexing="ij")
    pts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    resampled = up.sample(pts).T.reshape(2, 4, 4, 4)
    assert np.allclose(resampled, vol.data, atol=1e-5)


def test_upsample_factor_4():
    vol = random_volume(c=1, n=2)
    up = upsample(vol, factor=4)
    assert up.resolution == 8


def test_learned_upsample_zero_init_matches_trilinear():
    vol = random_volume(c=3, n=4)
    sr = SuperResolutionNet(channels=3, seed=1)
    plain = upsample(vol, mode="trilinear")
    learned = upsample(vol, mode="learned", sr=sr)
    assert np.allclose(learned.data, plain.data, atol=1e-6)


def test_learned_upsample_requires_weights():
    with pytest.raises(ValueError, match="super-resolution"):
        upsample(random_volume(), mode="learned")


def test_upsample_invalid_mode_and_factor():
    with pytest.raises(ValueError):
        upsample(random_volume(), mode="cubic")
    with pytest.raises(ValueError):
        upsample(random_volume(), factor=3)


def test_volume_validation():
    with pytest.raises(ValueError, match="finite"):
        bad = np.zeros((1, 2, 2, 2), dtype=np.float32)
        bad[0, 0, 0, 0] = np.nan
        FeatureVolume(bad)
    with pytest.raises(ValueError):
        FeatureVolume(np.zeros((2, 3, 4, 3), dtype=np.float32))


def test_volb_round_trip(tmp_path):
    vol = random_volume(c=4, n=8)
    path = tmp_path / "vol.volb"
    save_volume(path, vol)
    loaded = load_volume(path)
    assert np.array_equal(loaded.data, vol.data)
    assert path.read_bytes()[:4] == b"VOLB"
    save_volume(tmp_path / "again.volb", vol)
    assert (tmp_path / "again.volb").read_bytes() == path.read_bytes()


def test_sample_matches_tape_op():
    from volgen import ops as tape_ops

    vol = random_volume(c=2, n=5)
    pts = RNG.uniform(-1.2, 1.2, size=(40, 3)).astype(np.float32)
    assert np.allclose(tape_ops.trilinear_sample(vol.data, pts).data, vol.sample(pts), atol=1e-6)
