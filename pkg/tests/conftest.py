import numpy as np
import pytest

from mmlab.marketdata import LEVELS, SyntheticConfig, TickRecord, TickSeries, gen_synthetic


def make_record(t=0, ask=5065, bid=5064, last=5064, ask_vol=10, bid_vol=10, volume=1):
    """One snapshot with a 1-tick ladder above ``ask`` and below ``bid``."""
    av = ask_vol if isinstance(ask_vol, tuple) else (ask_vol,) * LEVELS
    bv = bid_vol if isinstance(bid_vol, tuple) else (bid_vol,) * LEVELS
    return TickRecord(
        update_time=1_643_706_000_000 + 500 * t,
        ask_price=tuple(ask + k for k in range(LEVELS)),
        bid_price=tuple(bid - k for k in range(LEVELS)),
        ask_vol=av,
        bid_vol=bv,
        last_price=last,
        volume=volume,
        open_interest=1000,
        turnover=10.0 * volume * last,
    )


def series_from_quotes(asks, bids, lasts, session_id="s", ask_vol=10, bid_vol=10):
    recs = [make_record(t=i, ask=a, bid=b, last=l, ask_vol=ask_vol, bid_vol=bid_vol)
            for i, (a, b, l) in enumerate(zip(asks, bids, lasts))]
    return TickSeries.from_records(session_id, recs)


@pytest.fixture(scope="session")
def small_series():
    return gen_synthetic(SyntheticConfig(n_ticks=600, seed=11))


@pytest.fixture(scope="session")
def medium_series():
    return gen_synthetic(SyntheticConfig(n_ticks=3000, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
