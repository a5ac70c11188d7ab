"""Backtests, performance metrics and validation-based model selection."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import AgentSpec, run_agent
from .env import FEATURES, Action, EnvConfig, MarketMakingEnv, StepLog
from .errors import NoCheckpoints, TooFewDays, ZeroTrades, ZeroVariance
from .marketdata import TickSeries
from .mlp import Checkpoint

log = logging.getLogger(__name__)

TRADING_DAYS = 252
AREA_FLOOR = 1e-9


@dataclass
class BacktestReport:
    """Per-session step logs of one agent; every session starts from a flat account."""

    agent: str
    session_ids: list[str]
    logs: list[StepLog]

    @property
    def daily_pnl(self) -> np.ndarray:
        return np.array([g.wealth[-1] if len(g) else 0.0 for g in self.logs])

    @property
    def daily_trades(self) -> np.ndarray:
        return np.array([g.fills for g in self.logs])

    @property
    def trading_times(self) -> int:
        return int(self.daily_trades.sum())

    @property
    def inventory_path(self) -> np.ndarray:
        return np.concatenate([g.inv for g in self.logs]) if self.logs else np.zeros(0)

    def cumulative(self, column: str) -> np.ndarray:
        """Money path across sessions, each session continuing from the previous close."""
        parts, offset = [], 0.0
        for g in self.logs:
            col = getattr(g, column)
            parts.append(col + offset)
            if len(col):
                offset += col[-1]
        return np.concatenate(parts) if parts else np.zeros(0)

    def check_wealth_identity(self) -> bool:
        return all(np.array_equal(g.wealth, g.cash + g.inv_value) for g in self.logs)


def backtest(agent: AgentSpec, sessions: Sequence[TickSeries], config: EnvConfig | None = None,
             jobs: int = 1) -> BacktestReport:
    """Run ``agent`` over each session independently, in session order.

    ``jobs > 1`` spreads sessions over threads; the compiled kernel releases
    the GIL, and results do not depend on scheduling.
    """
    config = config or EnvConfig()

    def one(series: TickSeries) -> StepLog:
        return run_agent(agent, MarketMakingEnv(series, config))

    if jobs > 1 and len(sessions) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            logs = list(pool.map(one, sessions))
    else:
        logs = [one(s) for s in sessions]
    return BacktestReport(agent.label, [s.session_id for s in sessions], logs)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def annualized_sharpe(daily_pnl: Sequence[float]) -> float:
    """Mean over sample std of daily P&L, scaled by sqrt(252); zero risk-free rate."""
    x = np.asarray(daily_pnl, dtype=float)
    if len(x) < 2:
        raise TooFewDays(f"need at least 2 days, got {len(x)}")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0 or not math.isfinite(sd):
        raise ZeroVariance("daily P&L has zero variance")
    return float(np.mean(x)) / sd * math.sqrt(TRADING_DAYS)


def inventory_areas(inv_path: Sequence[float]) -> tuple[float, float]:
    """Areas above and below zero of the inventory step function, one unit per tick."""
    x = np.asarray(inv_path, dtype=float)
    return float(np.clip(x, 0, None).sum()), float(np.clip(-x, 0, None).sum())


def imbalance_ratio(inv_path: Sequence[float], floor: float = AREA_FLOOR) -> float:
    """``ln(upper area / lower area)`` of the inventory path, each area floored at ``floor``."""
    if len(inv_path) == 0:
        raise ValueError("empty inventory path")
    up, down = inventory_areas(inv_path)
    return math.log(max(up, floor)) - math.log(max(down, floor))


def avg_profit(total_pnl: float, trading_times: int) -> float:
    if trading_times == 0:
        raise ZeroTrades("average profit undefined without trades")
    return total_pnl / trading_times


@dataclass
class Metrics:
    """One column of the agent comparison table. Undefined values are ``None``."""

    sharpe: float | None
    imb: float
    avg_profit: float | None
    trading_times: int
    total_pnl: float = 0.0
    days: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(report: BacktestReport) -> Metrics:
    daily = report.daily_pnl
    try:
        sharpe = annualized_sharpe(daily)
    except (ZeroVariance, TooFewDays):
        sharpe = None
    trades = report.trading_times
    total = float(daily.sum())
    try:
        profit = avg_profit(total, trades)
    except ZeroTrades:
        profit = None
    path = report.inventory_path
    imb = imbalance_ratio(path) if len(path) else 0.0
    return Metrics(sharpe=sharpe, imb=imb, avg_profit=profit, trading_times=trades,
                   total_pnl=total, days=len(daily))


# ---------------------------------------------------------------------------
# model selection
# ---------------------------------------------------------------------------

def validation_metrics(checkpoint: Checkpoint, sessions: Sequence[TickSeries],
                       config: EnvConfig | None = None) -> dict:
    """Greedy validation backtest of a checkpoint, reduced to the selection statistics."""
    report = backtest(AgentSpec.drla(checkpoint), sessions, config)
    m = summarize(report)
    return {
        "daily_trades": float(np.mean(report.daily_trades)) if len(sessions) else 0.0,
        "sharpe": m.sharpe,
        "imb": m.imb,
        "total_pnl": m.total_pnl,
    }


@dataclass
class Selection:
    checkpoint: Checkpoint
    index: int
    fallback: bool


def select_model(checkpoints: Sequence[Checkpoint], validation_sessions=None,
                 config: EnvConfig | None = None, min_daily_trades: float = 50) -> Selection:
    """Best checkpoint by validation Sharpe among those trading more than ``min_daily_trades`` a day.

    Checkpoints without ``daily_trades``/``sharpe`` metrics are evaluated on
    ``validation_sessions`` first. When none passes the trade filter the most
    active checkpoint is returned with ``fallback=True``.
    """
    if not checkpoints:
        raise NoCheckpoints("nothing to select from")
    stats = []
    for ck in checkpoints:
        m = ck.metrics
        if "daily_trades" not in m or "sharpe" not in m:
            if validation_sessions is None:
                raise ValueError("checkpoint lacks validation metrics and no sessions were given")
            m = validation_metrics(ck, validation_sessions, config)
        stats.append((float(m["daily_trades"]), m["sharpe"]))
    survivors = [i for i, (trades, _) in enumerate(stats) if trades > min_daily_trades]
    if survivors:
        def key(i):
            s = stats[i][1]
            return -math.inf if s is None else s
        best = max(survivors, key=key)  # first index wins ties
        return Selection(checkpoints[best], best, False)
    best = max(range(len(stats)), key=lambda i: stats[i][0])
    log.warning("no checkpoint trades more than %s per day; falling back to the most active",
                min_daily_trades)
    return Selection(checkpoints[best], best, True)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

# state columns carry a prefix: the feature d_inv_value would otherwise collide
# with the per-step change in inventory value of the same name
STATE_COLUMNS = [f"state_{f}" for f in FEATURES]
STEP_LOG_FIELDS = (["session", "t"] + STATE_COLUMNS
                   + ["action", "match_ask", "match_bid", "d_cash", "d_inv_value",
                      "reward", "inv", "wealth"])


def _atomic_writer(path: Path):
    tmp = path.with_suffix(path.suffix + ".tmp")
    return tmp, tmp.open("w", newline="")


def write_step_log(report: BacktestReport, path: str | Path) -> Path:
    path = Path(path)
    tmp, fh = _atomic_writer(path)
    with fh:
        w = csv.writer(fh)
        w.writerow(STEP_LOG_FIELDS)
        for sid, g in zip(report.session_ids, report.logs):
            for i in range(len(g)):
                w.writerow([sid, int(g.t[i])] + [_num(x) for x in g.states[i]]
                           + [Action(int(g.actions[i])).name, int(g.match_ask[i]),
                              int(g.match_bid[i]), _num(g.d_cash[i]), _num(g.d_inv_value[i]),
                              _num(g.reward[i]), int(g.inv[i]), _num(g.wealth[i])])
    tmp.replace(path)
    return path


def read_step_log(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """States ``(n, 5)`` and action indices from a step-log CSV."""
    states, actions = [], []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            states.append([float(row[c]) for c in STATE_COLUMNS])
            actions.append(int(Action[row["action"]]))
    return np.array(states).reshape(-1, len(FEATURES)), np.array(actions, dtype=np.int64)


def load_step_log(path: str | Path, agent: str = "") -> BacktestReport:
    """Rebuild a report from a step-log CSV, one :class:`StepLog` per session column value.

    Only the columns the log carries are restored; cash and inventory value
    are recovered as cumulative sums of their per-step changes.
    """
    rows: dict[str, list[dict]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["session"], []).append(row)
    logs = []
    for rs in rows.values():
        def col(name, kind=float):
            return np.array([kind(r[name]) for r in rs], dtype=kind)
        states = np.array([[float(r[c]) for c in STATE_COLUMNS] for r in rs]).reshape(-1, len(FEATURES))
        d_cash, d_val = col("d_cash"), col("d_inv_value")
        logs.append(StepLog(
            t=col("t", int), states=np.vstack([states, states[-1:]]),
            actions=np.array([int(Action[r["action"]]) for r in rs], dtype=np.int64),
            match_ask=col("match_ask", int), match_bid=col("match_bid", int),
            d_cash=d_cash, d_inv_value=d_val, reward=col("reward"), inv=col("inv", int),
            cash=np.cumsum(d_cash), inv_value=np.cumsum(d_val), wealth=col("wealth"), done=True))
    return BacktestReport(agent, list(rows), logs)


def write_plot_data(report: BacktestReport, path: str | Path) -> Path:
    """Cumulative cash, inventory value, wealth and inventory per step, for plotting."""
    path = Path(path)
    cash, val, wealth = (report.cumulative(c) for c in ("cash", "inv_value", "wealth"))
    inv = report.inventory_path
    tmp, fh = _atomic_writer(path)
    with fh:
        w = csv.writer(fh)
        w.writerow(["step", "cash", "inv_value", "wealth", "inventory"])
        for i in range(len(inv)):
            w.writerow([i, _num(cash[i]), _num(val[i]), _num(wealth[i]), int(inv[i])])
    tmp.replace(path)
    return path


def write_metrics(metrics: dict[str, Metrics], json_path: str | Path,
                  csv_path: str | Path | None = None) -> None:
    """Metrics per agent as JSON, and optionally as the agent-by-metric comparison table."""
    json_path = Path(json_path)
    payload = {name: m.to_dict() for name, m in metrics.items()}
    tmp = json_path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(json_path)
    if csv_path is None:
        return
    csv_path = Path(csv_path)
    rows = [("Sharpe", "sharpe"), ("Imbalance Ratio", "imb"), ("Avg. Profit", "avg_profit"),
            ("Trading Times", "trading_times")]
    tmp, fh = _atomic_writer(csv_path)
    with fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + list(metrics))
        for label, key in rows:
            w.writerow([label] + ["" if getattr(m, key) is None else _num(getattr(m, key))
                                  for m in metrics.values()])
    tmp.replace(csv_path)


def _num(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)
