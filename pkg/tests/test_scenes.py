"""Procedural scenes: fields, intersections, baking, caption grammar."""

import numpy as np
import pytest

from volgen.camera import CameraPose, Intrinsics, rays_for_pixels
from volgen.scenes import (
    KIND_WORDS,
    Primitive,
    SceneSpec,
    bake_volume,
    density_to_logit,
    first_hit,
    scene_gen,
)


def sphere(radius=0.5, center=(0, 0, 0), color=(1, 0, 0), density=25.0):
    return Primitive("sphere", tuple(center), (radius,), color, density)


def test_primitive_validation():
    with pytest.raises(ValueError, match="outside"):
        Primitive("sphere", (0.8, 0, 0), (0.5,), (1, 0, 0))
    with pytest.raises(ValueError, match="density"):
        Primitive("sphere", (0, 0, 0), (0.5,), (1, 0, 0), density=0.0)
    with pytest.raises(ValueError, match="color"):
        Primitive("sphere", (0, 0, 0), (0.5,), (2, 0, 0))
    with pytest.raises(ValueError, match="kind"):
        Primitive("cone", (0, 0, 0), (0.5,), (1, 0, 0))


def test_contains_each_kind():
    assert sphere().contains(np.array([[0.2, 0.2, 0.2]]))[0]
    assert not sphere().contains(np.array([[0.5, 0.5, 0.5]]))[0]
    box = Primitive("box", (0, 0, 0), (0.3, 0.2, 0.4), (0, 1, 0))
    assert box.contains(np.array([[0.29, -0.19, 0.39]]))[0]
    assert not box.contains(np.array([[0.31, 0.0, 0.0]]))[0]
    cyl = Primitive("cylinder", (0, 0, 0), (0.3, 0.5), (0, 0, 1))
    assert cyl.contains(np.array([[0.2, 0.45, 0.1]]))[0]
    assert not cyl.contains(np.array([[0.0, 0.55, 0.0]]))[0]
    tor = Primitive("torus", (0, 0, 0), (0.4, 0.1), (1, 1, 0))
    assert tor.contains(np.array([[0.4, 0.0, 0.0]]))[0]
    assert not tor.contains(np.array([[0.0, 0.0, 0.0]]))[0]


def test_max_density_union():
    a = sphere(0.5, color=(1, 0, 0), density=10.0)
    b = sphere(0.4, color=(0, 0, 1), density=30.0)
    scene = SceneSpec([a, b])
    dens, color = scene.fields_at(np.array([[0.0, 0.0, 0.0], [0.45, 0.0, 0.0]]))
    assert dens[0] == 30.0 and np.allclose(color[0], (0, 0, 1))
    assert dens[1] == 10.0 and np.allclose(color[1], (1, 0, 0))


def test_sphere_hit_depth():
    scene = SceneSpec([sphere(1.0, density=40.0)])
    o = np.array([[0.0, 0.0, 2.0]])
    d = np.array([[0.0, 0.0, -1.0]])
    assert first_hit(scene, o, d)[0] == pytest.approx(1.0, abs=1e-9)


def test_two_spheres_nearer_hit():
    near = Primitive("sphere", (0.0, 0.0, 0.5), (0.2,), (1, 0, 0))
    far = Primitive("sphere", (0.0, 0.0, -0.5), (0.2,), (0, 1, 0))
    scene = SceneSpec([near, far])
    t = first_hit(scene, np.array([[0.0, 0.0, 2.0]]), np.array([[0.0, 0.0, -1.0]]))
    assert t[0] == pytest.approx(2.0 - 0.5 - 0.2, abs=1e-9)


def test_box_cylinder_torus_hits():
    box = Primitive("box", (0, 0, 0), (0.3, 0.3, 0.3), (1, 0, 0))
    t = first_hit(SceneSpec([box]), np.array([[0.0, 0.0, 2.0]]), np.array([[0.0, 0.0, -1.0]]))
    assert t[0] == pytest.approx(1.7, abs=1e-9)
    cyl = Primitive("cylinder", (0, 0, 0), (0.3, 0.4), (1, 0, 0))
    t = first_hit(SceneSpec([cyl]), np.array([[0.0, 0.0, 2.0]]), np.array([[0.0, 0.0, -1.0]]))
    assert t[0] == pytest.approx(1.7, abs=1e-9)
    # cap hit from above
    t = first_hit(SceneSpec([cyl]), np.array([[0.0, 2.0, 0.0]]), np.array([[0.0, -1.0, 0.0]]))
    assert t[0] == pytest.approx(1.6, abs=1e-9)
    tor = Primitive("torus", (0, 0, 0), (0.4, 0.1), (1, 0, 0))
    t = first_hit(SceneSpec([tor]), np.array([[0.4, 2.0, 0.0]]), np.array([[0.0, -1.0, 0.0]]))
    assert t[0] == pytest.approx(1.9, abs=1e-4)
    # through the hole
    t = first_hit(SceneSpec([tor]), np.array([[0.0, 2.0, 0.0]]), np.array([[0.0, -1.0, 0.0]]))
    assert np.isinf(t[0])


def test_density_logit_round_trip():
    for dens in (25.0, 10.0, 60.0):
        f0 = density_to_logit(np.array([dens]))[0]
        from volgen.scenes import BAKE_SCALE, BAKE_SHIFT

        back = np.logaddexp(0.0, BAKE_SCALE * f0 - BAKE_SHIFT)
        assert back == pytest.approx(dens, rel=1e-9)
    assert density_to_logit(np.array([0.0]))[0] == 0.0


def test_bake_empty_scene_zero():
    vol = bake_volume(SceneSpec([]), n=8)
    assert np.array_equal(vol.data, np.zeros_like(vol.data))


def test_bake_sphere_center_and_corner():
    scene = SceneSpec([sphere(0.5)])
    vol = bake_volume(scene, n=32)
    occ = vol.data[0]
    center_idx = (15, 15, 15)
    assert occ[center_idx] == occ.max()
    assert occ[center_idx] > 0.9
    # voxel nearest (0.9, 0.9, 0.9): index 30 on each axis
    assert occ[30, 30, 30] == 0.0
    assert np.allclose(vol.data[1:, 30, 30, 30], 0.0)


def test_scene_json_round_trip():
    scene = scene_gen(seed=3, count=1, complexity=2)[0]
    blob = scene.dumps()
    back = SceneSpec.from_json(__import__("json").loads(blob))
    assert back.dumps() == blob
    assert back.caption == scene.caption


def test_scene_gen_deterministic():
    a = [s.dumps() for s in scene_gen(seed=11, count=4, complexity=2)]
    b = [s.dumps() for s in scene_gen(seed=11, count=4, complexity=2)]
    assert a == b
    c = [s.dumps() for s in scene_gen(seed=12, count=4, complexity=2)]
    assert a != c


def test_scene_gen_complexity_one():
    scenes = scene_gen(seed=0, count=5, complexity=1)
    assert all(len(s.primitives) == 1 for s in scenes)


def test_captions_mention_color_and_kind():
    for scene in scene_gen(seed=21, count=8, complexity=2):
        assert len(scene.primitives) == 2
        for prim in scene.primitives:
            assert KIND_WORDS[prim.kind] in scene.caption
        from volgen.scenes import PALETTE

        named = [name for name in PALETTE if name in scene.caption]
        assert len(named) >= 2


def test_scene_gen_primitives_inside_cube():
    for scene in scene_gen(seed=5, count=10, complexity=3):
        for p in scene.primitives:
            assert all(abs(c) + p.bounding_radius <= 1.0 + 1e-9 for c in p.center)


def test_first_hit_matches_contains_boundary():
    # walking a ray to its reported hit lands on the surface of some primitive
    scenes = scene_gen(seed=9, count=3, complexity=2)
    pose = CameraPose.look_at((0.0, 0.5, 2.0))
    intr = Intrinsics(50.0, 16, 16)
    px, py = np.meshgrid(np.arange(16), np.arange(16))
    origins, dirs, _, _ = rays_for_pixels(pose, intr, px.ravel(), py.ravel())
    for scene in scenes:
        t = first_hit(scene, origins, dirs)
        hit = np.isfinite(t)
        if not hit.any():
            continue
        pts_just_out = origins[hit] + (t[hit] - 1e-6)[:, None] * dirs[hit]
        pts_just_in = origins[hit] + (t[hit] + 1e-4)[:, None] * dirs[hit]
        assert not scene.density_at(pts_just_out).any()
        assert scene.density_at(pts_just_in).mean() > 0
