import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmlab.errors import BadCheckpoint, DimensionMismatch, EmptyBatch, ShapeMismatch
from mmlab.mlp import (
    MIRROR_ACTION,
    MIRROR_SIGN,
    Batch,
    Checkpoint,
    MLPParams,
    forward,
    n_params,
    sgd_apply,
    soft_update,
    symmetric_expand,
    td_loss_and_grad,
)

DIMS = (5, 64, 64, 64, 4)
SMALL = (5, 7, 6, 5, 4)


def reference_forward(params, x):
    """Loop-based re-implementation over the documented flat layout."""
    theta, dims = params.theta, params.dims
    h = list(x)
    off = 0
    for k in range(len(dims) - 1):
        n_in, n_out = dims[k], dims[k + 1]
        out = []
        for j in range(n_out):
            acc = 0.0
            for i in range(n_in):
                acc += theta[off + j * n_in + i] * h[i]
            out.append(acc)
        off += n_in * n_out
        out = [o + theta[off + j] for j, o in enumerate(out)]
        off += n_out
        h = [max(o, 0.0) for o in out] if k < len(dims) - 2 else out
    return np.array(h)


def random_batch(rng, B=8, terminal_frac=0.25):
    return Batch(rng.standard_normal((B, 5)), rng.integers(0, 4, B), rng.standard_normal(B),
                 rng.standard_normal((B, 5)), rng.random(B) < terminal_frac)


def test_zero_network_outputs_zero():
    assert np.array_equal(forward(MLPParams.zeros(DIMS), np.ones(5)), np.zeros(4))


def test_bias_pass_through():
    p = MLPParams.zeros(DIMS)
    W, b = p.layers()[-1]
    b[:] = [1.0, -2.0, 0.5, 3.0]
    assert np.array_equal(forward(p, np.arange(5.0)), b)


def test_forward_matches_reference_seed3():
    p = MLPParams.init(DIMS, 3)
    x = np.array([0.3, -1.1, 2.0, 0.7, -0.4])
    assert np.allclose(forward(p, x), reference_forward(p, x), rtol=0, atol=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        forward(MLPParams.zeros(DIMS), np.ones(4))


def test_params_shape_checked():
    with pytest.raises(ShapeMismatch):
        MLPParams(DIMS, np.zeros(10))
    assert MLPParams.zeros(DIMS).theta.size == n_params(DIMS)


def test_init_is_seeded():
    assert np.array_equal(MLPParams.init(DIMS, 4).theta, MLPParams.init(DIMS, 4).theta)
    assert not np.array_equal(MLPParams.init(DIMS, 4).theta, MLPParams.init(DIMS, 5).theta)


# -- loss and gradients -------------------------------------------------------

def test_loss_zero_at_fixed_point():
    p = MLPParams.zeros(SMALL)
    b = Batch(np.ones((3, 5)), np.array([0, 1, 2]), np.zeros(3), np.ones((3, 5)), np.zeros(3, bool))
    loss, g = td_loss_and_grad(p, p, b, 0.9)
    assert loss == 0.0 and not g.theta.any()


def test_terminal_transition_target_is_reward():
    p = MLPParams.zeros(SMALL)
    b = Batch(np.zeros((1, 5)), np.array([2]), np.array([1.0]), np.zeros((1, 5)), np.array([True]))
    loss, _ = td_loss_and_grad(p, MLPParams.init(SMALL, 1), b, 0.9)
    assert loss == 1.0


def test_empty_batch():
    p = MLPParams.zeros(SMALL)
    b = Batch(np.zeros((0, 5)), np.zeros(0, int), np.zeros(0), np.zeros((0, 5)), np.zeros(0, bool))
    with pytest.raises(EmptyBatch):
        td_loss_and_grad(p, p, b, 0.9)


def finite_difference(p, target, batch, gamma, symmetric=False, h=1e-6):
    num = np.empty_like(p.theta)
    for i in range(p.theta.size):
        up, down = p.theta.copy(), p.theta.copy()
        up[i] += h
        down[i] -= h
        lu, _ = td_loss_and_grad(MLPParams(p.dims, up), target, batch, gamma, symmetric)
        ld, _ = td_loss_and_grad(MLPParams(p.dims, down), target, batch, gamma, symmetric)
        num[i] = (lu - ld) / (2 * h)
    return num


def max_rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a) + np.abs(b))))


@pytest.mark.parametrize("symmetric", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed, symmetric):
    rng = np.random.default_rng(seed)
    p = MLPParams.init(SMALL, rng)
    p = MLPParams(SMALL, p.theta + 0.05 * rng.standard_normal(p.theta.size))
    target = MLPParams.init(SMALL, rng)
    batch = random_batch(rng)
    _, g = td_loss_and_grad(p, target, batch, 0.9, symmetric)
    assert max_rel_error(g.theta, finite_difference(p, target, batch, 0.9, symmetric)) < 1e-4


def test_no_gradient_through_target():
    rng = np.random.default_rng(0)
    p, t = MLPParams.init(SMALL, 1), MLPParams.init(SMALL, 2)
    batch = random_batch(rng)
    _, g1 = td_loss_and_grad(p, t, batch, 0.9)
    t2 = MLPParams(SMALL, t.theta.copy())
    _, g2 = td_loss_and_grad(p, t2, batch, 0.9)
    assert np.array_equal(g1.theta, g2.theta)


# -- updates ------------------------------------------------------------------

def test_sgd_examples():
    p = MLPParams.init(SMALL, 0)
    g = MLPParams.init(SMALL, 1)
    assert np.array_equal(sgd_apply(p, g, 0.0).theta, p.theta)
    assert np.array_equal(sgd_apply(p, MLPParams.zeros(SMALL), 0.3).theta, p.theta)
    one = MLPParams((1, 1), np.array([1.0, 0.0]))
    step = sgd_apply(one, MLPParams((1, 1), np.array([2.0, 0.0])), 0.5)
    assert step.theta[0] == 0.0


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        sgd_apply(MLPParams.zeros(SMALL), MLPParams.zeros(DIMS), 0.1)


def test_soft_update_examples():
    a, b = MLPParams.init(SMALL, 0), MLPParams.init(SMALL, 1)
    assert np.array_equal(soft_update(a, b, 1.0).theta, b.theta)
    assert np.array_equal(soft_update(a, b, 0.0).theta, a.theta)
    zero, two = MLPParams((1, 1), np.zeros(2)), MLPParams((1, 1), np.full(2, 2.0))
    assert np.array_equal(soft_update(zero, two, 0.5).theta, [1.0, 1.0])
    with pytest.raises(ShapeMismatch):
        soft_update(a, MLPParams.zeros(DIMS), 0.5)


@given(st.floats(0.05, 1.0))
@settings(max_examples=20, deadline=None)
def test_soft_update_contracts(tau):
    a, b = MLPParams.init(SMALL, 0), MLPParams.init(SMALL, 1)
    gaps = []
    for _ in range(400):
        gaps.append(np.max(np.abs(a.theta - b.theta)))
        a = soft_update(a, b, tau)
    assert all(g1 <= g0 for g0, g1 in zip(gaps, gaps[1:]))
    assert np.max(np.abs(a.theta - b.theta)) < 1e-6


@given(st.floats(0.01, 100.0))
@settings(max_examples=25, deadline=None)
def test_output_scaling_keeps_argmax(c):
    p = MLPParams.init(SMALL, 9)
    x = np.random.default_rng(2).standard_normal((20, 5))
    scaled = p.copy()
    W, b = scaled.layers()[-1]
    W *= c
    b *= c
    assert np.allclose(forward(scaled, x), c * forward(p, x))
    assert np.array_equal(forward(scaled, x).argmax(1), forward(p, x).argmax(1))


# -- reflection symmetry ------------------------------------------------------

def test_symmetric_expand_is_exact():
    p = MLPParams.init(SMALL, 4)
    X = np.random.default_rng(0).standard_normal((10, 5))
    assert np.allclose(forward(symmetric_expand(p), X), forward(p, X, symmetric=True),
                       rtol=0, atol=1e-12)


def test_symmetric_q_is_equivariant():
    p = MLPParams.init(SMALL, 4)
    X = np.random.default_rng(1).standard_normal((10, 5))
    q = forward(p, X, symmetric=True)
    q_m = forward(p, X * MIRROR_SIGN, symmetric=True)
    assert np.allclose(q_m, q[:, MIRROR_ACTION], rtol=0, atol=1e-12)


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    ck = Checkpoint(MLPParams.init(SMALL, 1), np.arange(5.0), np.full(5, 2.0), 5000,
                    {"sharpe": 1.5, "daily_trades": 70.0}, symmetric=True)
    path = ck.save(tmp_path / "ck.json")
    back = Checkpoint.load(path)
    assert np.array_equal(back.params.theta, ck.params.theta)
    assert back.params.dims == SMALL and back.step == 5000 and back.symmetric
    assert np.array_equal(back.mu, ck.mu) and back.metrics == ck.metrics
    d = json.loads(path.read_text())
    assert d["schema_version"] == 1 and d["dims"] == list(SMALL)
    assert len(d["layers"][0]["W"]) == SMALL[1] and len(d["layers"][0]["W"][0]) == SMALL[0]


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(BadCheckpoint):
        Checkpoint.load(bad)
    ck = Checkpoint(MLPParams.init(SMALL, 1), np.zeros(5), np.ones(5)).to_dict()
    ck["layers"][0]["W"][0][0] = float("nan")
    with pytest.raises(BadCheckpoint):
        Checkpoint.from_dict(ck)
    ck = Checkpoint(MLPParams.init(SMALL, 1), np.zeros(5), np.ones(5)).to_dict()
    ck["schema_version"] = 99
    with pytest.raises(BadCheckpoint):
        Checkpoint.from_dict(ck)
    ck = Checkpoint(MLPParams.init(SMALL, 1), np.zeros(5), np.ones(5)).to_dict()
    ck["dims"] = [5, 3, 4]
    with pytest.raises(BadCheckpoint):
        Checkpoint.from_dict(ck)
