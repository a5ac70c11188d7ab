"""Market-making environment over a replayed tick series.

Account quantities are tracked internally in *half ticks* (int) so that the
wealth identity ``wealth = cash + inv_value`` holds exactly: half spreads,
mid-price moves and ``inventory * mid move`` are all multiples of half a tick.
Public accessors convert back to ticks.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import InsufficientHistory, SeriesTooShort, SteppedPastEnd
from .marketdata import DerivedTick, TickRecord, TickSeries


class Action(enum.IntEnum):
    """Quote instruction for one step; bit 1 = ask quoted, bit 0 = bid quoted."""

    NN = 0
    NB = 1
    AN = 2
    AB = 3

    @property
    def quotes_ask(self) -> bool:
        return bool(self & 2)

    @property
    def quotes_bid(self) -> bool:
        return bool(self & 1)

    @classmethod
    def of(cls, ask: bool, bid: bool) -> "Action":
        return cls(2 * bool(ask) + bool(bid))


class StateVector(NamedTuple):
    imbalance: float
    volatility: float
    inventory: float
    spread: float
    d_inv_value: float


FEATURES = StateVector._fields


@dataclass(frozen=True)
class FillReport:
    match_ask: int
    match_bid: int
    ask_price: int | None = None
    bid_price: int | None = None

    @property
    def fills(self) -> int:
        return self.match_ask + self.match_bid


@dataclass(frozen=True)
class AccountState:
    """Snapshot of the account in ticks."""

    cash: float
    inventory: int
    inv_value: float
    wealth: float


REWARD_KINDS = ("symmetric", "inventory_punish")


@dataclass(frozen=True)
class EnvConfig:
    reward_kind: str = "symmetric"
    commission_per_fill: float = 1.0
    vol_window: int = 50
    d_inv_lag: int = 50
    warmup: int | None = None
    commission_in_reward: bool = True
    inclusive_fills: bool = False
    liquidate_at_close: bool = False

    def __post_init__(self):
        if self.reward_kind in ("sym", "punish"):
            object.__setattr__(self, "reward_kind",
                               {"sym": "symmetric", "punish": "inventory_punish"}[self.reward_kind])
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"reward_kind must be one of {REWARD_KINDS}")
        if self.vol_window < 2 or self.d_inv_lag < 1:
            raise ValueError("vol_window must be >= 2 and d_inv_lag >= 1")
        if self.warmup is None:
            object.__setattr__(self, "warmup", max(self.vol_window, self.d_inv_lag))
        if self.warmup < max(self.vol_window, self.d_inv_lag):
            raise ValueError("warmup must cover both feature windows")
        c2 = 2 * self.commission_per_fill
        if self.commission_per_fill < 0 or c2 != int(c2):
            raise ValueError("commission_per_fill must be a non-negative multiple of half a tick")

    @property
    def commission_half_ticks(self) -> int:
        return int(2 * self.commission_per_fill)

    @property
    def punish(self) -> bool:
        return self.reward_kind == "inventory_punish"


# ---------------------------------------------------------------------------
# pure building blocks
# ---------------------------------------------------------------------------

def check_execution(action: Action, tick_t: TickRecord, tick_next: TickRecord,
                    inclusive: bool = False) -> FillReport:
    """Fills of the unit quotes placed at the best self-side prices of ``tick_t``.

    An ask fills when the next last price trades strictly above it, a bid when
    it trades strictly below. ``inclusive`` turns both into non-strict tests.
    """
    action = Action(action)
    ask, bid = tick_t.ask_price[0], tick_t.bid_price[0]
    last = tick_next.last_price
    if inclusive:
        ma = action.quotes_ask and last >= ask
        mb = action.quotes_bid and last <= bid
    else:
        ma = action.quotes_ask and last > ask
        mb = action.quotes_bid and last < bid
    return FillReport(int(ma), int(mb), ask if ma else None, bid if mb else None)


def reward(kind: str, d_cash, d_inv_value, inv):
    """Step reward in ticks for ``"symmetric"`` or ``"inventory_punish"``."""
    if kind in ("symmetric", "sym"):
        return d_cash + d_inv_value
    if kind in ("inventory_punish", "punish"):
        return d_cash + d_inv_value - abs(inv)
    raise ValueError(f"unknown reward kind {kind!r}")


def compute_features(window: Sequence[DerivedTick], account: AccountState,
                     inv_value_history: Sequence[float], vol_window: int = 50,
                     lag: int = 50) -> StateVector:
    """Engineered state from the trailing market window and the account.

    ``window[-1]`` is the current tick; ``inv_value_history[-1]`` the current
    inventory value, so the lagged difference needs ``lag + 1`` entries.
    Volatility is the sample (n-1) standard deviation of the last
    ``vol_window`` mids.
    """
    if len(window) < vol_window:
        raise InsufficientHistory(f"need {vol_window} ticks, got {len(window)}")
    if len(inv_value_history) < lag + 1:
        raise InsufficientHistory(f"need {lag + 1} inventory values, got {len(inv_value_history)}")
    now = window[-1]
    mids = np.array([d.mid for d in window[-vol_window:]], dtype=float)
    return StateVector(
        imbalance=float(now.imbalance),
        volatility=float(np.std(mids, ddof=1)),
        inventory=float(account.inventory),
        spread=float(now.spread),
        d_inv_value=float(inv_value_history[-1] - inv_value_history[-1 - lag]),
    )


# ---------------------------------------------------------------------------
# precomputed market columns
# ---------------------------------------------------------------------------

class MarketArrays:
    """Per-tick columns the step loop reads; computed once per (series, vol_window)."""

    def __init__(self, series: TickSeries, vol_window: int = 50):
        self.series = series
        self.n = len(series)
        self.vol_window = vol_window
        self.ask1 = np.ascontiguousarray(series.ask_price[:, 0], dtype=np.int64)
        self.bid1 = np.ascontiguousarray(series.bid_price[:, 0], dtype=np.int64)
        self.last = np.ascontiguousarray(series.last_price, dtype=np.int64)
        self.mid2 = self.ask1 + self.bid1
        self.spread = self.ask1 - self.bid1
        self.imb = np.ascontiguousarray(series.imbalance, dtype=np.float64)
        self.vol = rolling_std(self.mid2 / 2.0, vol_window)


def rolling_std(x: np.ndarray, window: int) -> np.ndarray:
    """Sample std over the trailing ``window`` values; NaN until the window is full."""
    out = np.full(len(x), np.nan)
    if len(x) >= window:
        views = np.lib.stride_tricks.sliding_window_view(x, window)
        out[window - 1:] = views.std(axis=1, ddof=1)
    return out


_market_cache: dict[tuple[int, int], MarketArrays] = {}


def market_arrays(series: TickSeries, vol_window: int = 50) -> MarketArrays:
    key = (id(series), vol_window)
    hit = _market_cache.get(key)
    if hit is None or hit.series is not series:
        if len(_market_cache) > 256:
            _market_cache.clear()
        hit = _market_cache[key] = MarketArrays(series, vol_window)
    return hit


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

@dataclass
class StepLog:
    """Column arrays for a run of consecutive steps (money columns in ticks).

    ``states`` has one more row than the other columns: row ``i`` is the
    state the action of step ``i`` was chosen in, the final row is the
    state after the last step.
    """

    t: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    match_ask: np.ndarray
    match_bid: np.ndarray
    d_cash: np.ndarray
    d_inv_value: np.ndarray
    reward: np.ndarray
    inv: np.ndarray
    cash: np.ndarray
    inv_value: np.ndarray
    wealth: np.ndarray
    done: bool

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def fills(self) -> int:
        return int(self.match_ask.sum() + self.match_bid.sum())

    @classmethod
    def concat(cls, logs: Sequence["StepLog"]) -> "StepLog":
        if not logs:
            raise ValueError("nothing to concatenate")
        cols = {}
        for name in ("t", "actions", "match_ask", "match_bid", "d_cash", "d_inv_value",
                     "reward", "inv", "cash", "inv_value", "wealth"):
            cols[name] = np.concatenate([getattr(g, name) for g in logs])
        states = np.concatenate([g.states[:-1] for g in logs] + [logs[-1].states[-1:]])
        return cls(states=states, done=logs[-1].done, **cols)


class MarketMakingEnv:
    """Single-owner, sequential episode over one session.

    ``step`` is the reference per-step implementation; ``run`` advances many
    steps at once through the compiled kernel (or its pure-Python twin) and
    leaves the handle in exactly the state repeated ``step`` calls would.
    """

    def __init__(self, series: TickSeries, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.series = series
        self.market = market_arrays(series, self.config.vol_window)
        if len(series) <= self.config.warmup + 1:
            raise SeriesTooShort(
                f"series of {len(series)} ticks cannot cover warmup {self.config.warmup} + 1 step")
        self.hist = np.zeros(len(series), dtype=np.int64)
        # t, inventory, cash, inv_value, wealth (half ticks), fill count
        self.acct = np.zeros(6, dtype=np.int64)
        self.reset()

    # -- state ---------------------------------------------------------------
    def reset(self) -> StateVector:
        self.hist[:] = 0
        self.acct[:] = 0
        self.acct[0] = self.config.warmup
        return self.state()

    @property
    def t(self) -> int:
        return int(self.acct[0])

    @property
    def done(self) -> bool:
        return self.t >= len(self.series) - 1

    @property
    def steps_left(self) -> int:
        return len(self.series) - 1 - self.t

    @property
    def account(self) -> AccountState:
        _, inv, cash2, val2, wealth2, _ = (int(x) for x in self.acct)
        return AccountState(cash2 / 2, inv, val2 / 2, wealth2 / 2)

    @property
    def account_exact(self) -> tuple[Fraction, int, Fraction, Fraction]:
        _, inv, cash2, val2, wealth2, _ = (int(x) for x in self.acct)
        return Fraction(cash2, 2), inv, Fraction(val2, 2), Fraction(wealth2, 2)

    @property
    def fills(self) -> int:
        return int(self.acct[5])

    def state(self) -> StateVector:
        t, m, lag = self.t, self.market, self.config.d_inv_lag
        return StateVector(
            float(m.imb[t]), float(m.vol[t]), float(self.acct[1]), float(m.spread[t]),
            (int(self.hist[t]) - int(self.hist[t - lag])) / 2,
        )

    # -- reference stepping --------------------------------------------------
    def step(self, action) -> tuple[StateVector, float, FillReport, bool]:
        if self.done:
            raise SteppedPastEnd(f"episode ended at tick {self.t}")
        action = Action(action)
        cfg, m = self.config, self.market
        t = self.t
        fill = check_execution(action, self.series[t], self.series[t + 1], cfg.inclusive_fills)
        n_fill = fill.fills
        comm2 = cfg.commission_half_ticks * n_fill
        d_cash2 = int(m.spread[t]) * n_fill - comm2
        inv = int(self.acct[1]) - fill.match_ask + fill.match_bid
        d_val2 = inv * int(m.mid2[t + 1] - m.mid2[t])
        reward_cash2 = d_cash2 if cfg.commission_in_reward else d_cash2 + comm2
        t += 1
        if cfg.liquidate_at_close and t == len(self.series) - 1 and inv:
            cost2 = abs(inv) * (int(m.spread[t]) + cfg.commission_half_ticks)
            d_cash2 -= cost2
            reward_cash2 -= cost2
            inv = 0
        r2 = reward(cfg.reward_kind, reward_cash2, d_val2, 2 * inv)
        self.acct[0] = t
        self.acct[1] = inv
        self.acct[2] += d_cash2
        self.acct[3] += d_val2
        self.acct[4] += d_cash2 + d_val2
        self.acct[5] += n_fill
        self.hist[t] = self.acct[3]
        return self.state(), r2 / 2, fill, self.done

    # -- bulk stepping -------------------------------------------------------
    def run(self, n_steps: int | None = None, *, action: int = -1, max_inv: int = 0,
            net=None, eps=None, u=None, random_actions=None) -> StepLog:
        """Advance up to ``n_steps`` (default: to the end of the session).

        With ``action >= 0`` every step plays that fixed action; otherwise
        ``net`` (a :class:`~mmlab.kernels.NetSpec`) acts epsilon-greedily
        using the per-step arrays ``eps``, ``u`` and ``random_actions``.
        ``max_inv > 0`` suppresses the accumulating side at the bound.
        """
        if self.done:
            raise SteppedPastEnd(f"episode ended at tick {self.t}")
        n = self.steps_left if n_steps is None else min(int(n_steps), self.steps_left)
        cfg = self.config
        out = kernels.rollout(
            self.market, self.hist, self.acct, n,
            action=action, max_inv=max_inv, net=net, eps=eps, u=u, random_actions=random_actions,
            comm2=cfg.commission_half_ticks, punish=cfg.punish, inclusive=cfg.inclusive_fills,
            comm_in_reward=cfg.commission_in_reward, liquidate=cfg.liquidate_at_close,
            lag=cfg.d_inv_lag,
        )
        k = out["steps"]
        half = lambda a: a[:k] / 2.0  # noqa: E731
        return StepLog(
            t=out["t"][:k], states=out["states"][:k + 1], actions=out["actions"][:k],
            match_ask=out["match_ask"][:k], match_bid=out["match_bid"][:k],
            d_cash=half(out["d_cash"]), d_inv_value=half(out["d_inv"]), reward=half(out["reward"]),
            inv=out["inv"][:k], cash=half(out["cash"]), inv_value=half(out["inv_value"]),
            wealth=half(out["wealth"]), done=self.done,
        )


def reset(series: TickSeries, config: EnvConfig | None = None):
    """Fresh environment handle and its initial state."""
    env = MarketMakingEnv(series, config)
    return env, env.state()

