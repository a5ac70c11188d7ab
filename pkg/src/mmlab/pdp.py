"""Empirical partial dependence of the chosen action on one state variable.

For every bin ``x`` of a state variable the table holds the fraction of
logged decisions in that bin that picked each action. Nothing is queried
from the network: the estimate is pure counting over a decision log.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import FEATURES, Action
from .errors import BadRange, EmptyLog

MIN_COUNT = 100
DEFAULT_BINS = 20
INTEGER_VARIABLES = ("inventory", "spread")
DEFAULT_TRUNCATION = {
    "spread": (1.0, 15.0),
    "inventory": (-10.0, 10.0),
    "imbalance": (-1.0, 1.0),
}
PDP_FIELDS = ["bin_lo", "bin_hi", "count", "p_NN", "p_NB", "p_AN", "p_AB", "reliable"]


@dataclass(frozen=True)
class PDPTable:
    variable: str
    edges: np.ndarray       # (n_bins + 1,)
    counts: np.ndarray      # (n_bins,)
    probs: np.ndarray       # (n_bins, 4); rows of empty bins are zero
    min_count: int = MIN_COUNT

    @property
    def reliable(self) -> np.ndarray:
        return self.counts >= self.min_count

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def __len__(self) -> int:
        return len(self.counts)

    def rows(self) -> list[list]:
        out = []
        for k in range(len(self)):
            out.append([float(self.edges[k]), float(self.edges[k + 1]), int(self.counts[k])]
                       + [float(p) for p in self.probs[k]] + [int(self.reliable[k])])
        return out

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PDP_FIELDS)
            for row in self.rows():
                w.writerow([_fmt(x) for x in row])
        tmp.replace(path)
        return path


def _fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def default_truncation(variable: str, values: np.ndarray) -> tuple[float, float]:
    """Fixed ranges for spread, inventory and imbalance; 1st to 99th percentile otherwise."""
    if variable in DEFAULT_TRUNCATION:
        return DEFAULT_TRUNCATION[variable]
    lo, hi = np.percentile(values, [1, 99])
    if hi <= lo:
        hi = lo + 1.0
    return float(lo), float(hi)


def bin_edges(variable: str, lo: float, hi: float, bins: int | Sequence[float] | None) -> np.ndarray:
    """Explicit edges pass through; integer-valued variables get one bin per integer."""
    if bins is not None and not np.isscalar(bins):
        edges = np.asarray(bins, dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise BadRange("bin edges must be strictly increasing with at least two entries")
        return edges
    if bins is None and variable in INTEGER_VARIABLES:
        first, last = int(np.ceil(lo)), int(np.floor(hi))
        if last < first:
            raise BadRange(f"no integer inside [{lo}, {hi}]")
        return np.arange(first, last + 2, dtype=float) - 0.5
    n = DEFAULT_BINS if bins is None else int(bins)
    if n < 1:
        raise BadRange("need at least one bin")
    return np.linspace(lo, hi, n + 1)


def estimate_pdp(states, actions, variable: str, bins: int | Sequence[float] | None = None,
                 truncation: tuple[float, float] | None = None,
                 min_count: int = MIN_COUNT) -> PDPTable:
    """Action frequencies per bin of ``variable``.

    ``states`` is an ``(n, 5)`` array of raw state vectors and ``actions`` the
    action index taken in each. Samples outside ``truncation`` are dropped
    before binning; bins hold ``[lo, hi)`` except the last, which is closed.
    """
    if variable not in FEATURES:
        raise ValueError(f"unknown variable {variable!r}; expected one of {FEATURES}")
    states = np.asarray(states, dtype=float).reshape(-1, len(FEATURES))
    actions = np.asarray(actions, dtype=np.int64)
    if len(actions) == 0:
        raise EmptyLog("decision log is empty")
    if len(states) != len(actions):
        raise ValueError("states and actions differ in length")
    x = states[:, FEATURES.index(variable)]
    lo, hi = default_truncation(variable, x) if truncation is None else map(float, truncation)
    if not lo < hi:
        raise BadRange(f"truncation needs lo < hi, got ({lo}, {hi})")
    keep = (x >= lo) & (x <= hi)
    x, a = x[keep], actions[keep]
    edges = bin_edges(variable, lo, hi, bins)
    idx = np.searchsorted(edges, x, side="right") - 1
    idx[x == edges[-1]] = len(edges) - 2
    inside = (idx >= 0) & (idx < len(edges) - 1)
    n_bins = len(edges) - 1
    joint = np.zeros((n_bins, len(Action)), dtype=np.int64)
    np.add.at(joint, (idx[inside], a[inside]), 1)
    counts = joint.sum(axis=1)
    probs = np.zeros(joint.shape)
    nz = counts > 0
    probs[nz] = joint[nz] / counts[nz, None]
    return PDPTable(variable, edges, counts, probs, int(min_count))


def estimate_all(states, actions, min_count: int = MIN_COUNT) -> dict[str, PDPTable]:
    return {v: estimate_pdp(states, actions, v, min_count=min_count) for v in FEATURES}
