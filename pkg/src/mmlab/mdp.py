"""Tabular MDP solvers and model-free learners.

These serve as exact oracles for the function-approximation code: anything the
DQN learns on a small discrete problem can be checked against
:func:`value_iteration`.
"""
from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SingularSystem


class TabularMDP:
    """Finite MDP with transition tensor ``P[s, a, s']`` and reward tensor ``R[s, a, s']``.

    ``terminal`` marks absorbing states that end a sampled episode. Solvers
    never look at it; absorbing structure has to be encoded in ``P``/``R``.
    """

    def __init__(self, P, R, gamma: float, terminal=None, start=None):
        P = np.asarray(P, dtype=float)
        R = np.asarray(R, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape:
            raise ValueError(f"P must be (S, A, S) and match R, got {P.shape} / {R.shape}")
        if not 0 <= gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if np.any(P < 0) or np.any(P > 1) or np.any(np.abs(P.sum(axis=2) - 1) > 1e-12):
            raise ValueError("each P[s, a, :] must be a probability vector")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")
        self.P, self.R, self.gamma = P, R, float(gamma)
        S = P.shape[0]
        self.terminal = np.zeros(S, bool) if terminal is None else np.asarray(terminal, bool)
        if start is None:
            live = ~self.terminal
            start = live / live.sum() if live.any() else np.full(S, 1 / S)
        self.start = np.asarray(start, float)
        cdf = np.cumsum(P, axis=2)
        cdf[:, :, -1] = 1.0
        self._cdf = cdf.tolist()
        self._R = R.tolist()

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def expected_reward(self) -> np.ndarray:
        """``r[s, a] = sum_s' P R``."""
        return np.einsum("ijk,ijk->ij", self.P, self.R)

    def lookahead(self, V: np.ndarray) -> np.ndarray:
        return self.expected_reward() + self.gamma * self.P @ V

    def sample(self, s: int, a: int, u: float) -> tuple[int, float]:
        """Next state and reward for uniform draw ``u``; the learners' only view of the model."""
        s2 = bisect_right(self._cdf[s][a], u)
        return s2, self._R[s][a][s2]

    def to_json(self) -> str:
        return json.dumps({
            "n_states": self.n_states, "n_actions": self.n_actions, "gamma": self.gamma,
            "P": self.P.ravel().tolist(), "R": self.R.ravel().tolist(),
            "terminal": self.terminal.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "TabularMDP":
        d = json.loads(text)
        shape = (d["n_states"], d["n_actions"], d["n_states"])
        return cls(np.reshape(d["P"], shape), np.reshape(d["R"], shape), d["gamma"],
                   terminal=d.get("terminal"))


def random_mdp(n_states: int, n_actions: int, gamma: float = 0.9, seed: int = 0) -> TabularMDP:
    rng = np.random.default_rng(seed)
    P = rng.random((n_states, n_actions, n_states)) ** 2
    P /= P.sum(axis=2, keepdims=True)
    # renormalising leaves rounding of order 1e-16; push the residual into the last entry
    P[:, :, -1] = 1.0 - P[:, :, :-1].sum(axis=2)
    R = rng.normal(size=(n_states, n_actions, n_states))
    return TabularMDP(P, R, gamma)


def greedy(Q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest action index."""
    return np.argmax(Q, axis=1)


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_sweeps: int = 1_000_000,
                    log: list | None = None):
    """Bellman optimality sweeps until the sup-norm change drops below ``tol``.

    Returns ``(V, policy)``. If ``log`` is given, each sweep's sup-norm change
    is appended to it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = mdp.expected_reward()
    V = np.zeros(mdp.n_states)
    for _ in range(max_sweeps):
        V_new = (r + mdp.gamma * mdp.P @ V).max(axis=1)
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if log is not None:
            log.append(delta)
        if delta < tol:
            break
    return V, greedy(r + mdp.gamma * mdp.P @ V)


def solve_linear(mdp: TabularMDP, policy) -> np.ndarray:
    """Exact evaluation ``V = (I - gamma P_pi)^-1 r_pi`` of a deterministic policy."""
    policy = np.asarray(policy, dtype=int)
    idx = np.arange(mdp.n_states)
    P_pi = mdp.P[idx, policy]
    r_pi = mdp.expected_reward()[idx, policy]
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi
    try:
        V = np.linalg.solve(A, r_pi)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(V)):
        raise SingularSystem("non-finite solution")
    return V


def iterative_evaluation(mdp: TabularMDP, policy, sweeps: int = 10_000) -> np.ndarray:
    policy = np.asarray(policy, dtype=int)
    idx = np.arange(mdp.n_states)
    P_pi = mdp.P[idx, policy]
    r_pi = mdp.expected_reward()[idx, policy]
    V = np.zeros(mdp.n_states)
    for _ in range(sweeps):
        V = r_pi + mdp.gamma * P_pi @ V
    return V


def policy_iteration(mdp: TabularMDP, max_rounds: int = 10_000, log: list | None = None):
    """Alternate exact evaluation and greedy improvement until the policy is stable.

    An action only replaces the incumbent when it improves the lookahead by
    more than a rounding margin, which rules out cycling between near-ties.
    """
    policy = np.zeros(mdp.n_states, dtype=int)
    idx = np.arange(mdp.n_states)
    for _ in range(max_rounds):
        V = solve_linear(mdp, policy)
        if log is not None:
            log.append(V.copy())
        Q = mdp.lookahead(V)
        best = greedy(Q)
        margin = 1e-12 * max(1.0, float(np.max(np.abs(Q))))
        improve = Q[idx, best] > Q[idx, policy] + margin
        if not improve.any():
            return V, policy
        policy = np.where(improve, best, policy)
    return V, policy


@dataclass
class LearningSchedule:
    """Step sizes and exploration for the tabular learners.

    ``alpha`` maps the visit count of the updated (s, a) pair to a step size;
    ``epsilon`` maps the episode index to an exploration rate.
    """

    episodes: int = 1000
    max_steps: int = 100
    alpha: Callable[[int], float] = field(default=lambda n: 1.0 / n)
    epsilon: Callable[[int], float] | float = 0.1

    def eps(self, episode: int) -> float:
        e = self.epsilon(episode) if callable(self.epsilon) else self.epsilon
        if not 0 <= e <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        return float(e)


class _Draws:
    """Buffered uniform draws from one generator, so per-step sampling stays cheap."""

    def __init__(self, rng: np.random.Generator, block: int = 8192):
        self.rng, self.block = rng, block
        self.buf, self.i = rng.random(block).tolist(), 0

    def __call__(self) -> float:
        if self.i == self.block:
            self.buf, self.i = self.rng.random(self.block).tolist(), 0
        u = self.buf[self.i]
        self.i += 1
        return u


def _pick(row: list[float], eps: float, draw: _Draws) -> int:
    n = len(row)
    if eps > 0 and draw() < eps:
        return min(int(draw() * n), n - 1)
    best, arg = row[0], 0
    for a in range(1, n):
        if row[a] > best:
            best, arg = row[a], a
    return arg


def _td_control(mdp: TabularMDP, schedule: LearningSchedule, seed: int, on_policy: bool,
                Q0=None, returns: list | None = None) -> np.ndarray:
    draw = _Draws(np.random.default_rng(seed))
    S, A = mdp.n_states, mdp.n_actions
    Q = [[0.0] * A for _ in range(S)] if Q0 is None else np.asarray(Q0, float).tolist()
    visits = [[0] * A for _ in range(S)]
    terminal = mdp.terminal.tolist()
    start_cdf = np.cumsum(mdp.start)
    gamma = mdp.gamma
    for ep in range(schedule.episodes):
        eps = schedule.eps(ep)
        s = min(int(np.searchsorted(start_cdf, draw(), side="right")), S - 1)
        a = _pick(Q[s], eps, draw)
        total, disc = 0.0, 1.0
        for _ in range(schedule.max_steps):
            s2, r = mdp.sample(s, a, draw())
            total += disc * r
            disc *= gamma
            visits[s][a] += 1
            alpha = schedule.alpha(visits[s][a])
            if terminal[s2]:
                Q[s][a] += alpha * (r - Q[s][a])
                break
            a2 = _pick(Q[s2], eps, draw)
            boot = Q[s2][a2] if on_policy else max(Q[s2])
            Q[s][a] += alpha * (r + gamma * boot - Q[s][a])
            s, a = s2, a2
        if returns is not None:
            returns.append(total)
    return np.array(Q)


def q_learning(mdp: TabularMDP, schedule: LearningSchedule, seed: int = 0, Q0=None,
               returns: list | None = None) -> np.ndarray:
    """Off-policy TD control: the bootstrap uses ``max_a' Q(s', a')``.

    The step size for an update is ``schedule.alpha(n)`` with ``n`` the visit
    count of that (s, a) pair. ``returns`` collects each episode's discounted
    return under the behaviour policy.
    """
    return _td_control(mdp, schedule, seed, on_policy=False, Q0=Q0, returns=returns)


def sarsa(mdp: TabularMDP, schedule: LearningSchedule, seed: int = 0, Q0=None,
          returns: list | None = None) -> np.ndarray:
    """On-policy TD control: the bootstrap uses the next action actually chosen."""
    return _td_control(mdp, schedule, seed, on_policy=True, Q0=Q0, returns=returns)


# ---------------------------------------------------------------------------
# small benchmark worlds
# ---------------------------------------------------------------------------

MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left


def gridworld(rows: int = 4, cols: int = 4, gamma: float = 0.9, goal=None,
              goal_reward: float = 1.0, step_cost=None, cliff=(), cliff_reward: float = -100.0,
              start=None) -> TabularMDP:
    """Deterministic grid; the goal and cliff cells are absorbing.

    ``step_cost`` is either a scalar or a ``(rows, cols)`` array charged on
    entering a cell. Walking into the border leaves the agent in place.
    Stepping onto a cliff cell pays ``cliff_reward`` and ends the episode.
    """
    goal = (rows - 1, cols - 1) if goal is None else tuple(goal)
    S, A = rows * cols, len(MOVES)
    cost = np.broadcast_to(np.asarray(0.0 if step_cost is None else step_cost, float), (rows, cols))
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    terminal = np.zeros(S, bool)
    cliff = {tuple(c) for c in cliff}
    for r in range(rows):
        for c in range(cols):
            s = r * cols + c
            if (r, c) == goal or (r, c) in cliff:
                terminal[s] = True
                P[s, :, s] = 1.0
                continue
            for a, (dr, dc) in enumerate(MOVES):
                r2 = min(max(r + dr, 0), rows - 1)
                c2 = min(max(c + dc, 0), cols - 1)
                s2 = r2 * cols + c2
                P[s, a, s2] = 1.0
                if (r2, c2) == goal:
                    R[s, a, s2] = goal_reward
                elif (r2, c2) in cliff:
                    R[s, a, s2] = cliff_reward
                else:
                    R[s, a, s2] = -cost[r2, c2]
    if start is not None:
        start_dist = np.zeros(S)
        start_dist[start[0] * cols + start[1]] = 1.0
    else:
        start_dist = None
    return TabularMDP(P, R, gamma, terminal=terminal, start=start_dist)


# Per-cell entry costs of the 4x4 benchmark grid (goal bottom-right, gamma 0.9).
# Every non-terminal state has a unique optimal action with a lookahead gap of at least 0.04.
BENCHMARK_COSTS = np.array([
    [0.51, 0.95, 0.14, 0.95],
    [0.31, 0.42, 0.83, 0.41],
    [0.55, 0.03, 0.75, 0.54],
    [0.33, 0.79, 0.30, 0.45],
])


def benchmark_gridworld(gamma: float = 0.9) -> TabularMDP:
    return gridworld(4, 4, gamma=gamma, step_cost=BENCHMARK_COSTS)
