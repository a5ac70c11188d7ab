"""Backend selection for the hot loops.

The compiled extension ``mmlab._kernels`` is used when it was built; the
pure-Python ``mmlab._kernels_py`` is the fallback. Set ``MMLAB_PURE_PYTHON=1``
to force the fallback (benchmarks and parity tests do this).
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("MMLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    else:
        _impl = _compiled
        BACKEND = "compiled"
else:
    _compiled = None


def backends() -> dict:
    """Available implementations by name, for parity tests and benchmarks."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    else:
        try:
            from . import _kernels as mod
            out["compiled"] = mod
        except ImportError:
            pass
    return out


@dataclass(frozen=True)
class NetSpec:
    """Flat network parameters plus the input standardisation applied before layer 1."""

    theta: np.ndarray
    dims: np.ndarray
    mu: np.ndarray
    sd: np.ndarray

    @classmethod
    def build(cls, theta, dims, mu=None, sd=None) -> "NetSpec":
        n_in = int(dims[0])
        return cls(
            np.ascontiguousarray(theta, dtype=np.float64),
            np.ascontiguousarray(dims, dtype=np.int64),
            np.ascontiguousarray(np.zeros(n_in) if mu is None else mu, dtype=np.float64),
            np.ascontiguousarray(np.ones(n_in) if sd is None else sd, dtype=np.float64),
        )


_EMPTY_F = np.zeros(0, np.float64)
_EMPTY_I = np.zeros(0, np.int64)
_UNIT = np.ones(5, np.float64)


def forward_one(net: NetSpec, x, impl=None) -> np.ndarray:
    """Q-vector for one raw state (standardised with the net's statistics)."""
    impl = impl or _impl
    xn = (np.asarray(x, np.float64) - net.mu) / net.sd
    out = np.empty(int(net.dims[-1]))
    impl.forward_one(net.theta, net.dims, np.ascontiguousarray(xn), out)
    return out


def rollout(market, hist: np.ndarray, acct: np.ndarray, n_steps: int, *, action: int = -1,
            max_inv: int = 0, net: NetSpec | None = None, eps=None, u=None, random_actions=None,
            comm2: int = 2, punish: bool = False, inclusive: bool = False,
            comm_in_reward: bool = True, liquidate: bool = False, lag: int = 50, impl=None) -> dict:
    """Run up to ``n_steps`` environment steps, mutating ``hist`` and ``acct`` in place.

    Money columns in the returned dict are integer half ticks.
    """
    impl = impl or _impl
    if action < 0 and net is None:
        raise ValueError("either a fixed action or a network is required")
    n = int(n_steps)
    if action < 0:
        eps = np.zeros(n) if eps is None else np.ascontiguousarray(eps, dtype=np.float64)
        u = np.ones(n) if u is None else np.ascontiguousarray(u, dtype=np.float64)
        ra = (np.zeros(n, np.int64) if random_actions is None
              else np.ascontiguousarray(random_actions, dtype=np.int64))
        if min(len(eps), len(u), len(ra)) < n:
            raise ValueError("exploration arrays shorter than n_steps")
        theta, dims, mu, sd = net.theta, net.dims, net.mu, net.sd
    else:
        eps = u = _EMPTY_F
        ra = _EMPTY_I
        theta, dims, mu, sd = _EMPTY_F, _EMPTY_I, _UNIT, _UNIT
    out = {
        "t": np.zeros(n, np.int64),
        "states": np.zeros((n + 1, 5), np.float64),
        "actions": np.zeros(n, np.int64),
        "match_ask": np.zeros(n, np.int64),
        "match_bid": np.zeros(n, np.int64),
        "d_cash": np.zeros(n, np.int64),
        "d_inv": np.zeros(n, np.int64),
        "reward": np.zeros(n, np.int64),
        "inv": np.zeros(n, np.int64),
        "cash": np.zeros(n, np.int64),
        "inv_value": np.zeros(n, np.int64),
        "wealth": np.zeros(n, np.int64),
    }
    out["steps"] = impl.rollout(
        market.ask1, market.bid1, market.last, market.mid2, market.spread, market.imb, market.vol,
        hist, acct, n, int(action), int(max_inv), theta, dims, mu, sd, eps, u, ra,
        int(comm2), bool(punish), bool(inclusive), bool(comm_in_reward), bool(liquidate), int(lag),
        out["t"], out["states"], out["actions"], out["match_ask"], out["match_bid"],
        out["d_cash"], out["d_inv"], out["reward"], out["inv"], out["cash"], out["inv_value"],
        out["wealth"],
    )
    return out
