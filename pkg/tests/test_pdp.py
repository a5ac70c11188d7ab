import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmlab.errors import BadRange, EmptyLog
from mmlab.pdp import PDP_FIELDS, bin_edges, estimate_all, estimate_pdp


def log_with(variable_col, values, actions):
    states = np.zeros((len(values), 5))
    states[:, variable_col] = values
    return states, np.asarray(actions)


def test_single_bin_frequencies():
    states, actions = log_with(0, [0.1] * 4, [3, 3, 1, 0])
    t = estimate_pdp(states, actions, "imbalance", bins=[0.0, 0.5], min_count=1)
    assert t.counts.tolist() == [4]
    assert t.probs[0].tolist() == [0.25, 0.25, 0.0, 0.5]


def test_spread_bins_are_integer_aligned():
    values = [1, 1, 2, 15, 16, 0]
    states, actions = log_with(3, values, [0, 1, 2, 3, 3, 3])
    t = estimate_pdp(states, actions, "spread", min_count=1)
    assert t.edges[0] == 0.5 and t.edges[-1] == 15.5 and len(t) == 15
    assert t.counts.sum() == 4  # 16 and 0 fall outside [1, 15]
    assert t.counts[0] == 2 and t.counts[-1] == 1


def test_reliability_flag():
    states, actions = log_with(0, np.r_[np.full(150, -0.5), np.full(20, 0.5)], np.zeros(170, int))
    t = estimate_pdp(states, actions, "imbalance", bins=[-1, 0, 1])
    assert t.reliable.tolist() == [True, False]


def test_last_edge_is_closed():
    states, actions = log_with(0, [1.0], [2])
    t = estimate_pdp(states, actions, "imbalance", bins=[0.0, 0.5, 1.0], min_count=1)
    assert t.counts.tolist() == [0, 1]


def test_errors():
    with pytest.raises(EmptyLog):
        estimate_pdp(np.zeros((0, 5)), [], "spread")
    states, actions = log_with(0, [0.1], [0])
    with pytest.raises(BadRange):
        estimate_pdp(states, actions, "imbalance", truncation=(1.0, 1.0))
    with pytest.raises(BadRange):
        estimate_pdp(states, actions, "imbalance", bins=[0.5, 0.1])
    with pytest.raises(ValueError):
        estimate_pdp(states, actions, "price")


def test_bin_edges_linspace():
    assert np.allclose(bin_edges("volatility", 0.0, 1.0, 4), [0, 0.25, 0.5, 0.75, 1.0])


def test_csv_layout(tmp_path):
    states, actions = log_with(2, [-1, 0, 0, 1], [1, 2, 3, 0])
    path = estimate_pdp(states, actions, "inventory", min_count=1).write_csv(tmp_path / "p.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(PDP_FIELDS)
    assert len(lines) == 22


@given(arrays(float, (300, 5), elements=st.floats(-20, 20)),
       arrays(np.int64, 300, elements=st.integers(0, 3)))
@settings(max_examples=30, deadline=None)
def test_reliable_rows_sum_to_one(states, actions):
    states[:, 3] = np.round(np.abs(states[:, 3]))
    for t in estimate_all(states, actions, min_count=5).values():
        sums = t.probs[t.reliable].sum(axis=1)
        assert np.all(np.abs(sums - 1.0) <= 1e-12)
        assert np.all(t.counts[~(t.counts > 0)] == 0)
