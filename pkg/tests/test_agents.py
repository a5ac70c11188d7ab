import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmlab.agents import AgentSpec, act, clip_action, run_agent
from mmlab.env import Action, EnvConfig, MarketMakingEnv, StateVector
from mmlab.errors import BadCheckpoint
from mmlab.marketdata import SyntheticConfig, gen_synthetic
from mmlab.mlp import Checkpoint, MLPParams


def state(inv=0.0):
    return StateVector(0.1, 0.5, inv, 1.0, 0.0)


def test_fa_always_quotes_both_sides():
    for inv in (-100, 0, 7):
        assert act(AgentSpec.fa(), state(inv)) is Action.AB


def test_fawc_examples():
    agent = AgentSpec.fawc(5)
    assert act(agent, state(5)) is Action.AN
    assert act(agent, state(-5)) is Action.NB
    assert act(agent, state(4)) is Action.AB
    assert act(agent, state(0)) is Action.AB


@given(st.sampled_from(list(Action)), st.integers(-20, 20), st.integers(1, 10))
def test_clip_never_extends_past_limit(action, inv, k):
    a = clip_action(action, inv, k)
    assert int(a) & ~int(action) == 0  # only removes quotes
    if inv >= k:
        assert not a.quotes_bid
    if inv <= -k:
        assert not a.quotes_ask


def test_agent_aliases_and_validation():
    assert AgentSpec("fawc", max_inv=3).label == "FAwC(3)"
    with pytest.raises(ValueError):
        AgentSpec("random")
    with pytest.raises(ValueError):
        AgentSpec.fawc(0)
    with pytest.raises(BadCheckpoint):
        AgentSpec("DRLA")


def test_drla_greedy_on_bias():
    params = MLPParams.zeros((5, 4, 4, 4, 4))
    params.layers()[-1][1][:] = [0.0, 0.1, 2.0, 0.5]
    agent = AgentSpec.drla(Checkpoint(params, np.zeros(5), np.ones(5)))
    assert act(agent, state()) is Action.AN


def test_drla_from_path(tmp_path):
    ck = Checkpoint(MLPParams.init((5, 4, 4, 4, 4), 0), np.zeros(5), np.ones(5))
    agent = AgentSpec.drla(ck.save(tmp_path / "c.json"))
    assert np.array_equal(agent.checkpoint.params.theta, ck.params.theta)


@pytest.mark.parametrize("kind", ["FA", "FAwC", "DRLA"])
def test_bulk_run_matches_stepwise_act(kind, small_series):
    ck = Checkpoint(MLPParams.init((5, 8, 8, 8, 4), 2), np.zeros(5),
                    np.array([0.3, 0.2, 3.0, 1.0, 5.0]))
    agent = AgentSpec(kind, max_inv=3, checkpoint=ck if kind == "DRLA" else None)
    bulk = run_agent(agent, MarketMakingEnv(small_series))
    env = MarketMakingEnv(small_series)
    s, acts = env.state(), []
    while not env.done:
        acts.append(int(act(agent, s)))
        s, *_ = env.step(acts[-1])
    assert bulk.actions.tolist() == acts


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_fawc_inventory_bounded(seed):
    series = gen_synthetic(SyntheticConfig(n_ticks=2000, seed=seed))
    log = run_agent(AgentSpec.fawc(5), MarketMakingEnv(series, EnvConfig()))
    assert np.abs(log.inv).max() <= 5
