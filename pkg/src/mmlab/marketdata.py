"""Tick snapshot ingestion, derived quantities, session splits and a synthetic feed.

Prices are held as integer tick counts; ``tick_size`` converts back to quote
currency only at the CSV boundary.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    CrossedBook,
    DataError,
    InsufficientSessions,
    MalformedNumber,
    MissingField,
    NonMonotoneTime,
    ZeroDepth,
)

LEVELS = 5

CSV_FIELDS: tuple[str, ...] = (
    ("update_time",)
    + tuple(f"ask_price{i}" for i in range(1, LEVELS + 1))
    + tuple(f"bid_price{i}" for i in range(1, LEVELS + 1))
    + tuple(f"ask_vol{i}" for i in range(1, LEVELS + 1))
    + tuple(f"bid_vol{i}" for i in range(1, LEVELS + 1))
    + ("last_price", "volume", "open_interest", "turnover")
)


@dataclass(frozen=True)
class TickRecord:
    """One 500ms book snapshot. Prices are integer ticks, ``update_time`` is epoch ms."""

    update_time: int
    ask_price: tuple[int, ...]
    bid_price: tuple[int, ...]
    ask_vol: tuple[int, ...]
    bid_vol: tuple[int, ...]
    last_price: int
    volume: int
    open_interest: int
    turnover: float

    def validate(self, row: int | None = None) -> None:
        for name in ("ask_price", "bid_price", "ask_vol", "bid_vol"):
            if len(getattr(self, name)) != LEVELS:
                raise MissingField(f"{name} needs {LEVELS} levels", row)
        if self.ask_price[0] <= self.bid_price[0]:
            raise CrossedBook(
                f"ask1={self.ask_price[0]} <= bid1={self.bid_price[0]}", row)
        if any(b <= a for a, b in zip(self.ask_price, self.ask_price[1:])):
            raise CrossedBook("ask levels not strictly increasing", row)
        if any(b >= a for a, b in zip(self.bid_price, self.bid_price[1:])):
            raise CrossedBook("bid levels not strictly decreasing", row)
        values = (self.ask_price + self.bid_price + self.ask_vol + self.bid_vol
                  + (self.last_price, self.volume, self.open_interest))
        if min(values) < 0 or self.turnover < 0:
            raise MalformedNumber("negative price or volume", row)
        if sum(self.ask_vol) + sum(self.bid_vol) == 0:
            raise ZeroDepth("both sides of the book are empty", row)


class TickSeries:
    """Immutable, columnar series of validated snapshots for one trading session.

    Book columns are ``(n, 5)`` int64 arrays; every array is read-only.
    ``carried`` marks rows whose ``last_price`` was carried forward from the
    previous row because the interval had no trades.
    """

    def __init__(self, session_id: str, tick_size: float, *, update_time, ask_price,
                 bid_price, ask_vol, bid_vol, last_price, volume, open_interest,
                 turnover, carried=None, validate: bool = True):
        self.session_id = str(session_id)
        self.tick_size = float(tick_size)
        n = len(update_time)
        self.update_time = _frozen(update_time, np.int64)
        self.ask_price = _frozen(ask_price, np.int64).reshape(n, LEVELS)
        self.bid_price = _frozen(bid_price, np.int64).reshape(n, LEVELS)
        self.ask_vol = _frozen(ask_vol, np.int64).reshape(n, LEVELS)
        self.bid_vol = _frozen(bid_vol, np.int64).reshape(n, LEVELS)
        self.last_price = _frozen(last_price, np.int64)
        self.volume = _frozen(volume, np.int64)
        self.open_interest = _frozen(open_interest, np.int64)
        self.turnover = _frozen(turnover, np.float64)
        self.carried = _frozen(np.zeros(n, bool) if carried is None else carried, bool)
        if validate:
            self._validate()

    def _validate(self) -> None:
        n = len(self)
        if n == 0:
            raise DataError("empty tick series")
        if self.tick_size <= 0:
            raise DataError("tick_size must be positive")
        # vectorised screen first, then per-record checks only to locate the bad row
        bad = (
            (self.ask_price[:, 0] <= self.bid_price[:, 0])
            | np.any(np.diff(self.ask_price, axis=1) <= 0, axis=1)
            | np.any(np.diff(self.bid_price, axis=1) >= 0, axis=1)
            | (self.ask_vol.sum(1) + self.bid_vol.sum(1) == 0)
            | np.any(self.ask_vol < 0, axis=1) | np.any(self.bid_vol < 0, axis=1)
            | np.any(self.bid_price < 0, axis=1) | (self.last_price < 0)
            | (self.volume < 0) | (self.open_interest < 0) | (self.turnover < 0)
        )
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            self[i].validate(row=i)
        steps = np.diff(self.update_time)
        if np.any(steps <= 0):
            i = int(np.flatnonzero(steps <= 0)[0]) + 1
            raise NonMonotoneTime("update_time not strictly increasing", i)

    def __len__(self) -> int:
        return len(self.update_time)

    def __getitem__(self, i: int) -> TickRecord:
        return TickRecord(
            update_time=int(self.update_time[i]),
            ask_price=tuple(int(x) for x in self.ask_price[i]),
            bid_price=tuple(int(x) for x in self.bid_price[i]),
            ask_vol=tuple(int(x) for x in self.ask_vol[i]),
            bid_vol=tuple(int(x) for x in self.bid_vol[i]),
            last_price=int(self.last_price[i]),
            volume=int(self.volume[i]),
            open_interest=int(self.open_interest[i]),
            turnover=float(self.turnover[i]),
        )

    @property
    def records(self) -> list[TickRecord]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_records(cls, session_id: str, records: Sequence[TickRecord],
                     tick_size: float = 1.0) -> "TickSeries":
        if not records:
            raise DataError("empty tick series")
        for i, r in enumerate(records):
            r.validate(row=i)
        return cls(
            session_id, tick_size,
            update_time=[r.update_time for r in records],
            ask_price=[r.ask_price for r in records],
            bid_price=[r.bid_price for r in records],
            ask_vol=[r.ask_vol for r in records],
            bid_vol=[r.bid_vol for r in records],
            last_price=[r.last_price for r in records],
            volume=[r.volume for r in records],
            open_interest=[r.open_interest for r in records],
            turnover=[r.turnover for r in records],
        )

    # vectorised derived columns, used by the environment
    @property
    def mid(self) -> np.ndarray:
        return (self.ask_price[:, 0] + self.bid_price[:, 0]) / 2.0

    @property
    def spread(self) -> np.ndarray:
        return self.ask_price[:, 0] - self.bid_price[:, 0]

    @property
    def imbalance(self) -> np.ndarray:
        b = self.bid_vol.sum(1).astype(float)
        a = self.ask_vol.sum(1).astype(float)
        return (b - a) / (b + a)

    def equals(self, other: "TickSeries") -> bool:
        cols = ("update_time", "ask_price", "bid_price", "ask_vol", "bid_vol",
                "last_price", "volume", "open_interest", "turnover")
        return (self.tick_size == other.tick_size and len(self) == len(other)
                and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols))

    def __repr__(self) -> str:
        return f"TickSeries({self.session_id!r}, n={len(self)}, tick_size={self.tick_size})"


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DerivedTick:
    mid: float
    spread: int
    imbalance: float


def derive(tick: TickRecord) -> DerivedTick:
    """Mid price, spread (ticks) and 5-level depth imbalance of one snapshot."""
    bid_depth = sum(tick.bid_vol)
    ask_depth = sum(tick.ask_vol)
    if bid_depth + ask_depth == 0:
        raise ZeroDepth("imbalance undefined on an empty book")
    return DerivedTick(
        mid=(tick.ask_price[0] + tick.bid_price[0]) / 2,
        spread=tick.ask_price[0] - tick.bid_price[0],
        imbalance=(bid_depth - ask_depth) / (bid_depth + ask_depth),
    )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _parse_time(text: str, row: int) -> int:
    try:
        dt = datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise MalformedNumber(f"bad timestamp {text!r}", row) from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp() * 1000))


def format_time(ms: int) -> str:
    dt = datetime.fromtimestamp(ms / 1000, tz=timezone.utc).replace(tzinfo=None)
    return dt.isoformat(timespec="milliseconds")


def _to_ticks(text: str, tick: Decimal, row: int, name: str) -> int:
    try:
        q = Decimal(text.strip()) / tick
    except (InvalidOperation, ValueError) as exc:
        raise MalformedNumber(f"{name}={text!r} is not a number", row) from exc
    if not q.is_finite() or q != q.to_integral_value():
        raise MalformedNumber(f"{name}={text!r} is off the {tick} tick grid", row)
    return int(q)


def _to_int(text: str, row: int, name: str) -> int:
    try:
        value = float(text)
    except ValueError as exc:
        raise MalformedNumber(f"{name}={text!r} is not a number", row) from exc
    if not math.isfinite(value) or value != int(value):
        raise MalformedNumber(f"{name}={text!r} is not an integer", row)
    return int(value)


def parse_tick_csv(path: str | Path, tick_size: float = 1.0,
                   session_id: str | None = None) -> TickSeries:
    """Read and validate one session file.

    An empty ``last_price`` cell is allowed only where ``volume`` is 0; the
    previous value is carried forward and the row is flagged in ``carried``.
    Row indices in errors count data rows from 0.
    """
    path = Path(path)
    tick = Decimal(str(tick_size))
    cols: dict[str, list] = {k: [] for k in ("t", "ap", "bp", "av", "bv", "lp", "v", "oi", "to", "c")}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [f for f in CSV_FIELDS if f not in header]
        if missing:
            raise MissingField(f"{path.name}: header lacks {', '.join(missing)}")
        reader.fieldnames = header
        prev_t = None
        prev_last = None
        for i, raw in enumerate(reader):
            if any(raw.get(f) is None for f in CSV_FIELDS):
                raise MissingField("short row", i)
            t = _parse_time(raw["update_time"], i)
            if prev_t is not None and t <= prev_t:
                raise NonMonotoneTime(f"update_time {raw['update_time']} not after previous", i)
            volume = _to_int(raw["volume"], i, "volume")
            carried = raw["last_price"].strip() == ""
            if carried:
                if volume != 0 or prev_last is None:
                    raise MalformedNumber("last_price missing", i)
                last = prev_last
            else:
                last = _to_ticks(raw["last_price"], tick, i, "last_price")
            rec = TickRecord(
                update_time=t,
                ask_price=tuple(_to_ticks(raw[f"ask_price{k}"], tick, i, f"ask_price{k}") for k in range(1, 6)),
                bid_price=tuple(_to_ticks(raw[f"bid_price{k}"], tick, i, f"bid_price{k}") for k in range(1, 6)),
                ask_vol=tuple(_to_int(raw[f"ask_vol{k}"], i, f"ask_vol{k}") for k in range(1, 6)),
                bid_vol=tuple(_to_int(raw[f"bid_vol{k}"], i, f"bid_vol{k}") for k in range(1, 6)),
                last_price=last,
                volume=volume,
                open_interest=_to_int(raw["open_interest"], i, "open_interest"),
                turnover=_parse_float(raw["turnover"], i),
            )
            rec.validate(row=i)
            for key, val in zip(cols, (t, rec.ask_price, rec.bid_price, rec.ask_vol, rec.bid_vol,
                                       last, volume, rec.open_interest, rec.turnover, carried)):
                cols[key].append(val)
            prev_t, prev_last = t, last
    if not cols["t"]:
        raise DataError(f"{path.name}: no data rows")
    return TickSeries(
        session_id or path.stem, tick_size,
        update_time=cols["t"], ask_price=cols["ap"], bid_price=cols["bp"],
        ask_vol=cols["av"], bid_vol=cols["bv"], last_price=cols["lp"], volume=cols["v"],
        open_interest=cols["oi"], turnover=cols["to"], carried=cols["c"], validate=False,
    )


def _parse_float(text: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise MalformedNumber(f"turnover={text!r} is not a number", row) from exc
    if not math.isfinite(value):
        raise MalformedNumber("turnover is not finite", row)
    return value


def write_tick_csv(series: TickSeries, path: str | Path) -> Path:
    path = Path(path)
    tick = Decimal(str(series.tick_size))

    def price(x) -> str:
        return str((tick * int(x)).normalize()) if tick != 1 else str(int(x))

    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for i in range(len(series)):
            w.writerow(
                [format_time(int(series.update_time[i]))]
                + [price(x) for x in series.ask_price[i]]
                + [price(x) for x in series.bid_price[i]]
                + [int(x) for x in series.ask_vol[i]]
                + [int(x) for x in series.bid_vol[i]]
                + [price(series.last_price[i]), int(series.volume[i]),
                   int(series.open_interest[i]), repr(float(series.turnover[i]))]
            )
    tmp.replace(path)
    return path


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_sessions(sessions: Sequence[TickSeries], counts: tuple[int, int, int]):
    """Chronological train/validation/test split; train gets the earliest sessions."""
    n_train, n_val, n_test = counts
    if min(counts) < 0:
        raise ValueError("split counts must be non-negative")
    if sum(counts) > len(sessions):
        raise InsufficientSessions(
            f"need {sum(counts)} sessions for split {tuple(counts)}, have {len(sessions)}")
    ordered = sorted(sessions, key=lambda s: int(s.update_time[0]))
    train = list(ordered[:n_train])
    val = list(ordered[n_train:n_train + n_val])
    # test takes the latest sessions, so any surplus falls between val and test
    test = list(ordered[len(ordered) - n_test:]) if n_test else []
    return train, val, test


# ---------------------------------------------------------------------------
# synthetic feed
# ---------------------------------------------------------------------------

MID_MODELS = ("mean-reverting", "trending", "random-walk")


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters for :func:`gen_synthetic`.

    The latent fair value follows one of three models: a discretised
    Ornstein-Uhlenbeck process pulled toward a slowly wandering anchor,
    a random walk with ``drift`` (trending) or a driftless random walk.
    Book imbalance is skewed toward the expected next move so it carries
    a genuine but noisy signal.
    """

    n_ticks: int = 10_000
    seed: int = 0
    mid_model: str = "mean-reverting"
    reversion_strength: float = 0.5
    drift: float = 0.0
    base_spread: int = 1
    depth_scale: float = 20.0
    volatility: float = 1.0
    anchor_volatility: float = 0.05
    widen_prob: float = 0.1
    widen_persist: float = 0.8
    max_widen: int = 4
    trade_intensity: float = 3.0
    imbalance_skew: float = 0.8
    start_price: int = 5000
    tick_size: float = 1.0
    session_id: str = "synthetic"
    start_time: str = "2022-02-01T09:00:00"

    def __post_init__(self):
        if self.n_ticks < 2:
            raise ValueError("n_ticks must be >= 2")
        if self.base_spread < 1:
            raise ValueError("base_spread must be >= 1 tick")
        if self.mid_model not in MID_MODELS:
            raise ValueError(f"mid_model must be one of {MID_MODELS}")
        if self.reversion_strength < 0 or self.reversion_strength > 2:
            raise ValueError("reversion_strength must lie in [0, 2]")
        if not 0 <= self.widen_prob <= 1 or not 0 <= self.widen_persist <= 1:
            raise ValueError("widening probabilities must lie in [0, 1]")
        if not 0 <= self.imbalance_skew < 1:
            raise ValueError("imbalance_skew must lie in [0, 1)")
        if self.depth_scale <= 0 or self.volatility < 0 or self.trade_intensity < 0:
            raise ValueError("depth_scale must be positive, volatility and intensity >= 0")
        if self.start_price < 100 * (self.base_spread + self.max_widen):
            raise ValueError("start_price too close to zero for the book ladder")


def gen_synthetic(config: SyntheticConfig) -> TickSeries:
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = config.n_ticks
    kappa = config.reversion_strength if config.mid_model == "mean-reverting" else 0.0
    drift = 0.0 if config.mid_model == "random-walk" else config.drift

    fair = np.empty(n)
    expected_move = np.empty(n)
    shocks = rng.standard_normal(n) * config.volatility
    anchor_shocks = rng.standard_normal(n) * config.anchor_volatility
    fair[0] = anchor = float(config.start_price)
    for t in range(n):
        anchor += drift + (anchor_shocks[t] if kappa > 0 else 0.0)
        expected_move[t] = kappa * (anchor - fair[t]) + (drift if kappa == 0 else 0.0)
        if t + 1 < n:
            fair[t + 1] = fair[t] + expected_move[t] + shocks[t]

    # spread regime: persistent widening episodes on top of base_spread
    extra = np.zeros(n, np.int64)
    widen_draw = rng.random(n)
    size_draw = rng.integers(1, config.max_widen + 1, size=n)
    for t in range(1, n):
        if extra[t - 1] > 0 and widen_draw[t] < config.widen_persist:
            extra[t] = extra[t - 1]
        elif extra[t - 1] == 0 and widen_draw[t] < config.widen_prob:
            extra[t] = size_draw[t]
    spread = config.base_spread + extra
    bid1 = np.floor(fair - spread / 2.0 + 0.5).astype(np.int64)
    ask1 = bid1 + spread
    ladder = np.arange(LEVELS, dtype=np.int64)
    ask_price = ask1[:, None] + ladder
    bid_price = bid1[:, None] - ladder

    scale = max(config.volatility, 1e-9)
    pressure = np.tanh(expected_move / scale)
    lam_b = config.depth_scale * (1 + config.imbalance_skew * pressure)
    lam_a = config.depth_scale * (1 - config.imbalance_skew * pressure)
    bid_vol = 1 + rng.poisson(np.repeat(lam_b[:, None], LEVELS, 1))
    ask_vol = 1 + rng.poisson(np.repeat(lam_a[:, None], LEVELS, 1))

    volume = rng.poisson(config.trade_intensity, size=n).astype(np.int64)
    noise = rng.uniform(-0.5, 0.5, size=n)
    traded = np.clip(np.floor(fair + noise + 0.5).astype(np.int64), bid1, ask1)
    last = np.empty(n, np.int64)
    carried = np.zeros(n, bool)
    last[0] = traded[0]
    for t in range(1, n):
        if volume[t] > 0:
            last[t] = traded[t]
        else:
            last[t] = last[t - 1]
            carried[t] = True

    open_interest = 100_000 + np.cumsum(rng.integers(-2, 3, size=n))
    open_interest = np.maximum(open_interest, 0)
    turnover = volume * last * config.tick_size * 10.0  # 10 units per contract
    start = _parse_time(config.start_time, 0)
    update_time = start + 500 * np.arange(n, dtype=np.int64)
    return TickSeries(
        config.session_id, config.tick_size,
        update_time=update_time, ask_price=ask_price, bid_price=bid_price,
        ask_vol=ask_vol, bid_vol=bid_vol, last_price=last, volume=volume,
        open_interest=open_interest, turnover=turnover.astype(float), carried=carried,
    )


def gen_sessions(config: SyntheticConfig, n_sessions: int) -> list[TickSeries]:
    """``n_sessions`` independent daily sessions, one calendar day apart.

    Each session's seed is derived from ``config.seed`` and its index.
    """
    out = []
    base = datetime.fromisoformat(config.start_time)
    seeds = np.random.SeedSequence(config.seed).spawn(n_sessions)
    for k in range(n_sessions):
        start_dt = base + timedelta(days=k)
        cfg = replace(config, seed=int(seeds[k].generate_state(1)[0]),
                      session_id=f"{config.session_id}-{start_dt:%Y%m%d}",
                      start_time=start_dt.isoformat())
        out.append(gen_synthetic(cfg))
    return out
