import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmlab.mdp import (
    LearningSchedule,
    TabularMDP,
    benchmark_gridworld,
    greedy,
    gridworld,
    iterative_evaluation,
    policy_iteration,
    q_learning,
    random_mdp,
    sarsa,
    solve_linear,
    value_iteration,
)


def one_state(r=1.0, gamma=0.5):
    return TabularMDP(np.ones((1, 1, 1)), np.full((1, 1, 1), r), gamma)


def to_terminal(rewards, gamma=0.9):
    """State 0 moves to absorbing state 1; action ``a`` pays ``rewards[a]``."""
    A = len(rewards)
    P = np.zeros((2, A, 2))
    P[:, :, 1] = 1.0
    R = np.zeros((2, A, 2))
    R[0, :, 1] = rewards
    return TabularMDP(P, R, gamma, terminal=[False, True])


def chain(gamma=0.9):
    """Two states; action 0 stays, action 1 switches. Being moved into state 1 pays 1."""
    P = np.zeros((2, 2, 2))
    R = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, 0, s] = 1.0
        P[s, 1, 1 - s] = 1.0
    R[:, :, 1] = 1.0
    return TabularMDP(P, R, gamma)


# -- model --------------------------------------------------------------------

def test_rejects_non_stochastic_rows():
    P = np.full((2, 1, 2), 0.6)
    with pytest.raises(ValueError):
        TabularMDP(P, np.zeros_like(P), 0.9)


def test_rejects_gamma_one():
    with pytest.raises(ValueError):
        one_state(gamma=1.0)


def test_json_round_trip():
    m = random_mdp(4, 2, seed=3)
    m2 = TabularMDP.from_json(m.to_json())
    assert np.array_equal(m.P, m2.P) and np.array_equal(m.R, m2.R) and m.gamma == m2.gamma


def test_greedy_ties_lowest_index():
    assert greedy(np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]])).tolist() == [1, 0]


# -- planning -----------------------------------------------------------------

def test_value_iteration_geometric_series():
    V, pi = value_iteration(one_state(1.0, 0.5))
    assert V[0] == pytest.approx(2.0, abs=1e-9)


def test_value_iteration_myopic():
    m = random_mdp(5, 3, gamma=0.0, seed=2)
    V, _ = value_iteration(m)
    assert np.allclose(V, m.expected_reward().max(axis=1), atol=1e-12)


def test_value_iteration_matches_linear_solve_seed7():
    m = random_mdp(5, 3, seed=7)
    V, pi = value_iteration(m)
    assert np.max(np.abs(V - solve_linear(m, pi))) < 1e-8


def test_value_iteration_is_gamma_contraction():
    m = random_mdp(6, 3, gamma=0.8, seed=4)
    log = []
    value_iteration(m, log=log)
    for d0, d1 in zip(log, log[1:]):
        assert d1 <= m.gamma * d0 + 1e-12


def test_policy_iteration_single_action():
    m = random_mdp(4, 1, seed=1)
    V, pi = policy_iteration(m)
    assert pi.tolist() == [0, 0, 0, 0]
    assert np.allclose(V, solve_linear(m, pi), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_policy_iteration_agrees_with_value_iteration(seed):
    m = random_mdp(5, 3, seed=seed)
    V_pi, pi = policy_iteration(m)
    V_vi, _ = value_iteration(m)
    assert np.max(np.abs(V_pi - V_vi)) < 1e-8
    # fixed point: greedy w.r.t. its own value
    Q = m.lookahead(V_pi)
    assert np.all(Q[np.arange(5), pi] >= Q.max(axis=1) - 1e-10)


def test_policy_iteration_chain_moves_toward_reward():
    m = chain()
    # enumerate all four deterministic policies with the linear solver
    values = {(a0, a1): solve_linear(m, [a0, a1]) for a0 in (0, 1) for a1 in (0, 1)}
    best = max(values, key=lambda k: values[k].sum())
    V, pi = policy_iteration(m)
    assert tuple(pi) == best == (1, 0)


def test_policy_iteration_values_monotone():
    log = []
    policy_iteration(random_mdp(8, 4, seed=11), log=log)
    for a, b in zip(log, log[1:]):
        assert np.all(b >= a - 1e-10)


def test_solve_linear_closed_forms():
    assert solve_linear(one_state(3.0, 0.75), [0])[0] == pytest.approx(12.0, abs=1e-10)
    m = random_mdp(4, 2, gamma=0.0, seed=5)
    pi = [0, 1, 1, 0]
    assert np.allclose(solve_linear(m, pi), m.expected_reward()[np.arange(4), pi])


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_linear_solve_matches_iterative_evaluation(seed):
    m = random_mdp(4, 3, gamma=0.9, seed=seed)
    pi = np.random.default_rng(seed).integers(0, 3, 4)
    assert np.max(np.abs(solve_linear(m, pi) - iterative_evaluation(m, pi))) < 1e-8


# -- learning -----------------------------------------------------------------

def test_q_learning_single_update():
    m = to_terminal([1.0])
    Q = q_learning(m, LearningSchedule(episodes=1, max_steps=1, alpha=lambda n: 0.5, epsilon=0.0))
    assert Q[0, 0] == 0.5


def test_q_learning_single_update_with_bootstrap():
    # non-terminal successor whose values are still zero
    m = chain(gamma=0.9)
    sched = LearningSchedule(episodes=1, max_steps=1, alpha=lambda n: 0.5, epsilon=0.0)
    Q = q_learning(m, sched, Q0=np.zeros((2, 2)))
    updated = Q[Q != 0]
    assert updated.tolist() in ([], [0.5])


def test_sarsa_single_update():
    m = to_terminal([1.0])
    Q = sarsa(m, LearningSchedule(episodes=1, max_steps=1, alpha=lambda n: 0.5, epsilon=0.0))
    assert Q[0, 0] == 0.5


def test_greedy_learner_never_touches_other_arms():
    m = to_terminal([1.0, 0.2, 0.1])
    Q0 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    Q = q_learning(m, LearningSchedule(episodes=200, max_steps=5, epsilon=0.0), Q0=Q0)
    assert Q[0, 1] == 0.0 and Q[0, 2] == 0.0


def test_sarsa_equals_q_learning_when_greedy():
    m = benchmark_gridworld()
    sched = LearningSchedule(episodes=300, max_steps=50, epsilon=0.0)
    assert np.array_equal(q_learning(m, sched, seed=3), sarsa(m, sched, seed=3))


def test_learners_are_deterministic():
    m = benchmark_gridworld()
    sched = LearningSchedule(episodes=200, max_steps=50)
    assert np.array_equal(q_learning(m, sched, seed=1), q_learning(m, sched, seed=1))


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_q_values_bounded(seed):
    m = random_mdp(4, 2, gamma=0.8, seed=seed)
    bound = np.abs(m.R).max() / (1 - m.gamma)
    for learner in (q_learning, sarsa):
        Q = learner(m, LearningSchedule(episodes=100, max_steps=30), seed=seed)
        assert np.all(np.abs(Q) <= bound + 1e-9)


def test_q_learning_recovers_optimal_policy_on_benchmark():
    m = benchmark_gridworld()
    _, pi = value_iteration(m)
    Q = q_learning(m, LearningSchedule(episodes=50_000, max_steps=100, epsilon=0.1), seed=1)
    live = ~m.terminal
    assert np.array_equal(greedy(Q)[live], pi[live])


def test_sarsa_safer_than_q_learning_on_cliff():
    rows, cols = 4, 8
    cliff = [(rows - 1, c) for c in range(1, cols - 1)]
    m = gridworld(rows, cols, gamma=0.99, goal=(rows - 1, cols - 1), goal_reward=0.0,
                  step_cost=1.0, cliff=cliff, cliff_reward=-100.0, start=(rows - 1, 0))
    sched = LearningSchedule(episodes=3000, max_steps=200, alpha=lambda n: 0.1, epsilon=0.1)
    online = []
    q_learning(m, sched, seed=0, returns=online)
    Qs = sarsa(m, sched, seed=0)
    start = (rows - 1) * cols
    V_sarsa = solve_linear(m, greedy(Qs))[start]
    assert V_sarsa >= np.mean(online[-1000:])


def test_gridworld_border_and_absorbing():
    m = gridworld(2, 2, step_cost=0.5)
    # moving up from the top-left corner stays put and pays the entry cost of that cell
    assert m.P[0, 0, 0] == 1.0 and m.R[0, 0, 0] == -0.5
    goal = 3
    assert m.terminal[goal] and np.all(m.P[goal, :, goal] == 1.0)
