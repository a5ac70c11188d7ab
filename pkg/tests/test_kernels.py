import numpy as np
import pytest

from mmlab import kernels
from mmlab.env import EnvConfig, MarketMakingEnv, market_arrays
from mmlab.mlp import MLPParams, forward

BACKENDS = kernels.backends()


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
@pytest.mark.parametrize("mode", ["fixed", "clipped", "net"])
@pytest.mark.parametrize("punish", [False, True])
def test_backends_agree(medium_series, mode, punish):
    market = market_arrays(medium_series)
    n = len(medium_series) - 51
    rng = np.random.default_rng(7)
    params = MLPParams.init((5, 16, 16, 16, 4), rng)
    net = params.net(mu=np.array([0, 1, 0, 2, 0.0]), sd=np.array([0.3, 0.2, 4, 1.3, 10]))
    kw = dict(punish=punish, lag=50)
    if mode == "fixed":
        kw.update(action=3)
    elif mode == "clipped":
        kw.update(action=3, max_inv=4)
    else:
        kw.update(net=net, eps=np.full(n, 0.3), u=rng.random(n), random_actions=rng.integers(0, 4, n))
    outs = {}
    for name, impl in BACKENDS.items():
        hist = np.zeros(len(medium_series), np.int64)
        acct = np.array([50, 0, 0, 0, 0, 0], np.int64)
        out = kernels.rollout(market, hist, acct, n, impl=impl, **kw)
        outs[name] = (out, hist, acct)
    (a, ha, ca), (b, hb, cb) = outs["python"], outs["compiled"]
    assert a["steps"] == b["steps"] == n
    for key in a:
        if key == "steps":
            continue
        if key == "states":
            assert np.allclose(a[key], b[key], rtol=0, atol=1e-12), key
        else:
            assert np.array_equal(a[key], b[key]), key
    assert np.array_equal(ha, hb) and np.array_equal(ca, cb)


@pytest.mark.parametrize("impl", list(BACKENDS))
def test_forward_one_matches_numpy(impl):
    params = MLPParams.init((5, 8, 8, 8, 4), 3)
    x = np.array([0.1, 1.2, -2.0, 1.0, 3.5])
    mu, sd = np.array([0, 1, 0, 1, 0.0]), np.array([1, 0.5, 2, 1, 4.0])
    got = kernels.forward_one(params.net(mu, sd), x, impl=BACKENDS[impl])
    assert np.allclose(got, forward(params, (x - mu) / sd), rtol=0, atol=1e-12)


def test_rollout_requires_policy(small_series):
    with pytest.raises(ValueError):
        kernels.rollout(market_arrays(small_series), np.zeros(600, np.int64),
                        np.zeros(6, np.int64), 10)


def test_rollout_rejects_short_exploration_arrays(small_series):
    env = MarketMakingEnv(small_series, EnvConfig())
    with pytest.raises(ValueError):
        env.run(20, net=MLPParams.zeros((5, 2, 4)).net(), eps=np.zeros(5), u=np.zeros(5),
                random_actions=np.zeros(5, np.int64))


def test_greedy_net_rollout_matches_step(small_series):
    params = MLPParams.init((5, 8, 8, 8, 4), 5)
    mu, sd = np.zeros(5), np.array([0.3, 0.2, 3.0, 1.0, 5.0])
    net = params.net(mu, sd)
    a = MarketMakingEnv(small_series)
    b = MarketMakingEnv(small_series)
    log = a.run(net=net)
    acts = []
    s = b.state()
    while not b.done:
        q = forward(params, (np.asarray(s) - mu) / sd)
        acts.append(int(np.argmax(q)))
        s, *_ = b.step(acts[-1])
    assert log.actions.tolist() == acts
    assert np.array_equal(a.acct, b.acct)
