"""Baseline and learned quoting agents behind one interface."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import Action, MarketMakingEnv, StateVector, StepLog
from .errors import BadCheckpoint
from .mlp import Checkpoint

AGENT_KINDS = ("FA", "FAwC", "DRLA")


@dataclass(frozen=True)
class AgentSpec:
    kind: str
    max_inv: int = 5
    checkpoint: Checkpoint | None = None

    def __post_init__(self):
        aliases = {"fa": "FA", "fawc": "FAwC", "drla": "DRLA"}
        object.__setattr__(self, "kind", aliases.get(str(self.kind).lower(), self.kind))
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"agent kind must be one of {AGENT_KINDS}")
        if self.kind == "FAwC" and self.max_inv < 1:
            raise ValueError("FAwC needs max_inv >= 1")
        if self.kind == "DRLA" and self.checkpoint is None:
            raise BadCheckpoint("DRLA agent needs a checkpoint")

    @classmethod
    def fa(cls) -> "AgentSpec":
        return cls("FA")

    @classmethod
    def fawc(cls, max_inv: int = 5) -> "AgentSpec":
        return cls("FAwC", max_inv=max_inv)

    @classmethod
    def drla(cls, checkpoint: Checkpoint | str | Path) -> "AgentSpec":
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = Checkpoint.load(checkpoint)
        return cls("DRLA", checkpoint=checkpoint)

    @property
    def label(self) -> str:
        return f"FAwC({self.max_inv})" if self.kind == "FAwC" else self.kind


def clip_action(action, inv: int, max_inv: int) -> Action:
    """Drop the quote that would push inventory past ``max_inv``.

    At ``+max_inv`` the bid is suppressed, at ``-max_inv`` the ask.
    """
    a = int(action)
    if inv >= max_inv:
        a &= 2
    if inv <= -max_inv:
        a &= 1
    return Action(a)


def act(agent: AgentSpec, state, rng: np.random.Generator | None = None) -> Action:
    """Action for one state. Every agent kind is deterministic; ``rng`` is accepted for API symmetry."""
    state = StateVector(*state)
    if agent.kind == "FA":
        return Action.AB
    if agent.kind == "FAwC":
        return clip_action(Action.AB, int(state.inventory), agent.max_inv)
    q = agent.checkpoint.q_values(np.asarray(state, float))
    return Action(int(np.argmax(q)))


def run_agent(agent: AgentSpec, env: MarketMakingEnv, n_steps: int | None = None) -> StepLog:
    """Play ``agent`` through ``env`` with the bulk kernel."""
    if agent.kind == "FA":
        return env.run(n_steps, action=int(Action.AB))
    if agent.kind == "FAwC":
        return env.run(n_steps, action=int(Action.AB), max_inv=agent.max_inv)
    n = env.steps_left if n_steps is None else n_steps
    return env.run(n, net=agent.checkpoint.net(), eps=np.zeros(n), u=np.ones(n),
                   random_actions=np.zeros(n, np.int64))
