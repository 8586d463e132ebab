"""Adam update contract, checked against an independent scalar simulation."""

import numpy as np
import pytest

from volgen.autodiff import ShapeError
from volgen.checkpoint import load_checkpoint, save_checkpoint
from volgen.optim import AdamState, adam_step


def reference_adam(x0, grad_fn, lr, betas, steps, eps=1e-8):
    """Plain-float Adam on a scalar, written independently of the library."""
    b1, b2 = betas
    m = v = 0.0
    x = x0
    xs = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        x = x - lr * mh / (vh**0.5 + eps)
        xs.append(x)
    return xs


def test_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(p["w"], [1.0, -2.0])
    assert state.step == 1


def test_first_step_magnitude_is_lr():
    for g0 in (0.3, -4.0, 1e-3):
        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([g0])}, AdamState(), lr=0.05)
        assert np.sign(p["w"][0]) == -np.sign(g0)
        assert abs(abs(p["w"][0]) - 0.05) < 1e-6


def test_quadratic_descent_matches_scalar_oracle():
    lr, betas = 0.1, (0.9, 0.99)
    expected = reference_adam(1.0, lambda x: 2 * x, lr, betas, 100)

    p = {"x": np.array([1.0])}
    state = AdamState()
    got = []
    for _ in range(100):
        adam_step(p, {"x": 2 * p["x"]}, state, lr=lr, betas=betas)
        got.append(p["x"][0])
    assert np.allclose(got, expected, atol=1e-12)
    # past the initial descent/overshoot transient, |x| settles below 0.1
    absx = np.abs(got)
    settled = next(i for i in range(len(absx)) if np.all(absx[i:] < 0.1))
    assert settled < 60
    assert absx[-1] < 0.01


def test_weight_decay_decoupled():
    p = {"w": np.array([2.0])}
    adam_step(p, {"w": np.zeros(1)}, AdamState(), lr=0.1, weight_decay=0.5)
    # zero grad: only the decay term moves the weight
    assert np.allclose(p["w"], 2.0 - 0.1 * 0.5 * 2.0)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, AdamState(), lr=0.1)


def test_per_param_learning_rates():
    p = {"a": np.array([0.0]), "b": np.array([0.0])}
    adam_step(p, {"a": np.ones(1), "b": np.ones(1)}, AdamState(), lr={"a": 0.1, "b": 0.01})
    assert abs(p["a"][0] + 0.1) < 1e-6
    assert abs(p["b"][0] + 0.01) < 1e-6


def test_checkpoint_round_trip(tmp_path):
    params = {
        "layer/w": np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32),
        "layer/b": np.zeros(4, dtype=np.float32),
        "scalar": np.float32(2.5).reshape(()),
    }
    path = tmp_path / "ck.vdcp"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(params)
    for k in params:
        assert np.array_equal(loaded[k], np.asarray(params[k], dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"VDCP"


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPEjunkjunk")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)
