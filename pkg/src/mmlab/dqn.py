"""Deep Q-learning with a replay buffer and a soft-updated action network.

The loop follows the buffer-flush variant: transitions accumulate until the
buffer is full, one update is made from a minibatch drawn out of it, the
action network is Polyak-averaged toward the value network, and the buffer
is emptied. ``classic_replay`` switches to a sliding-window buffer with an
update every ``update_every`` steps.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .env import EnvConfig, MarketMakingEnv
from .mlp import (
    N_ACTIONS,
    MIRROR_SIGN,
    N_FEATURES,
    Batch,
    Checkpoint,
    MLPParams,
    forward,
    sgd_apply,
    soft_update,
    symmetric_expand,
    td_loss_and_grad,
)

log = logging.getLogger(__name__)


class ReplayBuffer:
    """Fixed-capacity transition store (raw, unstandardised states)."""

    def __init__(self, capacity: int, n_features: int = N_FEATURES):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, n_features))
        self.a = np.zeros(capacity, np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, n_features))
        self.terminal = np.zeros(capacity, bool)
        self.size = 0
        self._head = 0  # next write position once the buffer wraps

    def __len__(self) -> int:
        return self.size

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    @property
    def free(self) -> int:
        return self.capacity - self.size

    def push(self, s, a, s2, r, terminal=False) -> None:
        self.push_many(np.atleast_2d(s), [a], np.atleast_2d(s2), [r], [terminal])

    def push_many(self, s, a, s2, r, terminal) -> None:
        """Append transitions; once full, the oldest are overwritten."""
        n = len(a)
        if n == 0:
            return
        keep = slice(max(0, n - self.capacity), n)
        idx = (self._head + np.arange(n)[keep]) % self.capacity
        self.s[idx] = np.asarray(s)[keep]
        self.a[idx] = np.asarray(a)[keep]
        self.s2[idx] = np.asarray(s2)[keep]
        self.r[idx] = np.asarray(r)[keep]
        self.terminal[idx] = np.asarray(terminal)[keep]
        self._head = (self._head + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator, replace: bool = False):
        if batch_size > self.size:
            raise ValueError(f"batch of {batch_size} from {self.size} stored transitions")
        idx = (rng.integers(0, self.size, batch_size) if replace
               else rng.choice(self.size, batch_size, replace=False))
        return self.s[idx], self.a[idx], self.s2[idx], self.r[idx], self.terminal[idx]

    def clear(self) -> None:
        self.size = 0
        self._head = 0


def select_action(q, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over ``q``; greedy ties go to the lowest index."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    q = np.asarray(q)
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


@dataclass
class TrainConfig:
    alpha: float = 1e-3
    epsilon: float = 1.0
    epsilon_end: float = 0.01
    gamma: float = 0.9
    tau: float = 0.1
    buffer_capacity: int = 64
    batch_size: int = 32
    epochs: int = 10
    eval_every: int = 5000
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64, 64)
    classic_replay: bool = False
    update_every: int = 1
    updates_per_flush: int = 1
    alpha_schedule: str = "constant"
    reward_scale: float = 1.0
    max_grad_norm: float | None = None
    norm_mean: tuple[float, ...] | None = None
    norm_std: tuple[float, ...] | None = None
    symmetric: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 <= self.epsilon <= 1 or not 0 <= self.epsilon_end <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if self.alpha_schedule not in ("constant", "inverse"):
            raise ValueError("alpha_schedule must be 'constant' or 'inverse'")
        if self.eval_every < 1 or self.epochs < 0:
            raise ValueError("eval_every must be positive and epochs non-negative")

    @property
    def dims(self) -> tuple[int, ...]:
        return (N_FEATURES, *self.hidden, N_ACTIONS)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    log: list[dict]
    value_params: MLPParams
    action_params: MLPParams
    steps: int

    def write_log(self, path: str | Path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "mean_Q", "var_Q", "epsilon"])
            for row in self.log:
                w.writerow([row["step"], repr(row["loss"]), repr(row["mean_Q"]),
                            repr(row["var_Q"]), repr(row["epsilon"])])
        tmp.replace(path)
        return path


class TabularEnv:
    """A :class:`~mmlab.mdp.TabularMDP` presented through the environment protocol.

    States are one-hot vectors padded with zeros to five features. An episode
    starts from the MDP's start distribution and ends in a terminal state or
    after ``max_steps``.
    """

    def __init__(self, mdp, max_steps: int = 50, seed: int = 0):
        if mdp.n_states > N_FEATURES or mdp.n_actions > N_ACTIONS:
            raise ValueError("tabular env needs at most 5 states and 4 actions")
        self.mdp = mdp
        self.max_steps = max_steps
        self.rng = np.random.default_rng(seed)
        self.reset()

    def features(self, s: int) -> np.ndarray:
        x = np.zeros(N_FEATURES)
        x[s] = 1.0
        return x

    def reset(self):
        self.s = int(self.rng.choice(self.mdp.n_states, p=self.mdp.start))
        self.k = 0
        self.finished = False
        return self.features(self.s)

    @property
    def done(self) -> bool:
        return self.finished

    @property
    def steps_left(self) -> int:
        return self.max_steps - self.k

    def run(self, n_steps, *, net, eps, u, random_actions):
        states, actions, rewards, terminal = [self.features(self.s)], [], [], []
        i = 0
        while i < n_steps and not self.finished:
            if u[i] < eps[i]:
                a = int(random_actions[i]) % self.mdp.n_actions
            else:
                q = kernels.forward_one(net, states[-1])[: self.mdp.n_actions]
                a = int(np.argmax(q))
            s2, r = self.mdp.sample(self.s, a, float(self.rng.random()))
            self.s = s2
            self.k += 1
            term = bool(self.mdp.terminal[s2])
            self.finished = term or self.k >= self.max_steps
            states.append(self.features(s2))
            actions.append(a)
            rewards.append(r)
            terminal.append(term)
            i += 1
        return _Segment(np.array(states), np.array(actions, np.int64), np.array(rewards),
                        np.array(terminal, bool), self.finished)


@dataclass
class _Segment:
    states: np.ndarray
    actions: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray
    done: bool


def epsilon_at(config: TrainConfig, step: np.ndarray, decay_steps: int) -> np.ndarray:
    """Linear decay from ``epsilon`` to ``min(epsilon_end, epsilon)`` over ``decay_steps``."""
    end = min(config.epsilon_end, config.epsilon)
    frac = np.minimum(1.0, np.asarray(step, float) / max(decay_steps, 1))
    return config.epsilon + (end - config.epsilon) * frac


def _standardiser(config: TrainConfig):
    mu = np.zeros(N_FEATURES) if config.norm_mean is None else np.asarray(config.norm_mean, float)
    sd = np.ones(N_FEATURES) if config.norm_std is None else np.asarray(config.norm_std, float)
    if config.symmetric:
        # reflection acts on standardised inputs, so sign-flipped features must stay centred
        mu = np.where(MIRROR_SIGN < 0, 0.0, mu)
    if np.any(sd <= 0):
        raise ValueError("normalisation std must be positive")
    return mu, sd


def train(make_env: Callable, episodes: Sequence, config: TrainConfig,
          validate: Callable[[Checkpoint], dict] | None = None,
          steps_per_epoch: int | None = None) -> TrainResult:
    """Train a Q-network on the episodes produced by ``make_env(episode)``.

    Every ``config.eval_every`` environment steps the value network is
    snapshotted into a :class:`Checkpoint`, annotated with ``validate``'s
    metrics. A checkpoint of the initial network is always recorded first.
    ``steps_per_epoch`` (if known) sets the exploration decay horizon.
    """
    rng = np.random.default_rng(config.seed)
    mu, sd = _standardiser(config)
    value = MLPParams.init(config.dims, rng)
    action_net = value.copy()
    buffer = ReplayBuffer(max(config.buffer_capacity, 1))
    decay = steps_per_epoch or 10_000
    history: list[dict] = []
    checkpoints: list[Checkpoint] = []

    def snapshot(step: int) -> None:
        ck = Checkpoint(value.copy(), mu.copy(), sd.copy(), step, symmetric=config.symmetric)
        if validate is not None:
            ck.metrics = dict(validate(ck))
        checkpoints.append(ck)

    snapshot(0)
    step = 0
    updates = 0
    for epoch in range(config.epochs):
        for idx in rng.permutation(len(episodes)):
            env = make_env(episodes[idx])
            while not env.done:
                if config.classic_replay:
                    until_update = config.update_every - step % config.update_every
                else:
                    until_update = buffer.free
                until_eval = config.eval_every - step % config.eval_every
                n = max(1, min(until_update, until_eval, env.steps_left))
                eps = epsilon_at(config, step + np.arange(n), decay)
                u = rng.random(n)
                ra = rng.integers(0, N_ACTIONS, n)
                acting = symmetric_expand(action_net) if config.symmetric else action_net
                seg = env.run(n, net=acting.net(mu, sd), eps=eps, u=u, random_actions=ra)
                k = len(seg.actions)
                terminal = getattr(seg, "terminal", None)
                if terminal is None:
                    terminal = np.zeros(k, bool)
                    if seg.done and k:
                        terminal[-1] = True
                buffer.push_many(seg.states[:-1], seg.actions, seg.states[1:],
                                 seg.reward * config.reward_scale, terminal)
                step += k
                ready = (step % config.update_every == 0 and len(buffer) >= config.batch_size
                         if config.classic_replay else buffer.full)
                if ready:
                    alpha = config.alpha
                    if config.alpha_schedule == "inverse":
                        alpha = min(config.alpha, 1.0 / step)
                    rounds = 1 if config.classic_replay else config.updates_per_flush
                    for _ in range(rounds):
                        s, a, s2, r, term = buffer.sample(config.batch_size, rng,
                                                          replace=config.classic_replay)
                        batch = Batch((s - mu) / sd, a, r, (s2 - mu) / sd, term)
                        loss, grad = td_loss_and_grad(value, action_net, batch, config.gamma,
                                                      config.symmetric)
                        if config.max_grad_norm is not None:
                            norm = float(np.linalg.norm(grad.theta))
                            if norm > config.max_grad_norm:
                                grad = MLPParams(grad.dims, grad.theta * (config.max_grad_norm / norm))
                        value = sgd_apply(value, grad, alpha)
                        updates += 1
                    action_net = soft_update(action_net, value, config.tau)
                    if not config.classic_replay:
                        buffer.clear()
                    q = forward(value, batch.s, config.symmetric)[np.arange(len(batch)), batch.a]
                    history.append({"step": step, "loss": loss, "mean_Q": float(q.mean()),
                                    "var_Q": float(q.var()), "epsilon": float(eps[k - 1])})
                if step % config.eval_every == 0:
                    snapshot(step)
        log.info("epoch %d done at step %d (%d updates)", epoch + 1, step, updates)
    return TrainResult(checkpoints, history, value, action_net, step)


# ---------------------------------------------------------------------------
# market wiring
# ---------------------------------------------------------------------------

def feature_statistics(sessions: Sequence, env_config: EnvConfig, seed: int = 0,
                       max_inv: int = 10):
    """Per-feature mean and std from uniformly random quoting on the training sessions.

    Inventory is capped at ``max_inv`` during the rollout; an uncapped random
    walk would inflate the inventory scale far beyond what a trained agent holds.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for series in sessions:
        env = MarketMakingEnv(series, env_config)
        n = env.steps_left
        seg = env.run(n, max_inv=max_inv, net=_NULL_NET, eps=np.ones(n), u=np.zeros(n),
                      random_actions=rng.integers(0, N_ACTIONS, n))
        parts.append(seg.states)
    X = np.concatenate(parts)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd < 1e-8] = 1.0
    return tuple(float(x) for x in mu), tuple(float(x) for x in sd)


_NULL_NET = MLPParams.zeros((N_FEATURES, 1, N_ACTIONS)).net()


def train_market(train_sessions: Sequence, val_sessions: Sequence, config: TrainConfig,
                 env_config: EnvConfig | None = None) -> TrainResult:
    """Training over market sessions with greedy validation at every checkpoint."""
    from .evaluation import validation_metrics

    env_config = env_config or EnvConfig()
    if config.norm_mean is None or config.norm_std is None:
        mu, sd = feature_statistics(train_sessions, env_config, seed=config.seed)
        config = replace(config, norm_mean=mu, norm_std=sd)
    per_epoch = sum(len(s) - env_config.warmup - 1 for s in train_sessions)
    validate = None
    if val_sessions:
        def validate(ck):
            return validation_metrics(ck, val_sessions, env_config)
    return train(lambda s: MarketMakingEnv(s, env_config), list(train_sessions), config,
                 validate=validate, steps_per_epoch=per_epoch)
