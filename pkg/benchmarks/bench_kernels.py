"""Compare the compiled and pure-Python rollout kernels.

Usage: python benchmarks/bench_kernels.py [--ticks N] [--repeat R]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mmlab import kernels
from mmlab.env import market_arrays
from mmlab.marketdata import SyntheticConfig, gen_synthetic
from mmlab.mlp import MLPParams


def time_rollout(market, n_ticks, impl, repeat, **kw):
    best = float("inf")
    for _ in range(repeat):
        hist = np.zeros(n_ticks, np.int64)
        acct = np.array([50, 0, 0, 0, 0, 0], np.int64)
        t0 = time.perf_counter()
        kernels.rollout(market, hist, acct, n_ticks - 51, impl=impl, **kw)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ticks", type=int, default=10_000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()

    series = gen_synthetic(SyntheticConfig(n_ticks=args.ticks, seed=0))
    market = market_arrays(series)
    n = args.ticks - 51
    rng = np.random.default_rng(0)
    net = MLPParams.init((5, 64, 64, 64, 4), rng).net()
    cases = {
        "fixed action (FA)": dict(action=3),
        "clipped action (FAwC)": dict(action=3, max_inv=5),
        "network, eps-greedy": dict(net=net, eps=np.full(n, 0.1), u=rng.random(n),
                                    random_actions=rng.integers(0, 4, n)),
    }
    impls = kernels.backends()
    print(f"{args.ticks} ticks, best of {args.repeat}; backends: {', '.join(impls)}")
    print(f"{'case':24s}" + "".join(f"{name:>14s}" for name in impls) + "     speedup")
    for label, kw in cases.items():
        times = {name: time_rollout(market, args.ticks, impl, args.repeat, **kw)
                 for name, impl in impls.items()}
        row = f"{label:24s}" + "".join(f"{t * 1e3:12.1f}ms" for t in times.values())
        if "compiled" in times:
            row += f"  {times['python'] / times['compiled']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
