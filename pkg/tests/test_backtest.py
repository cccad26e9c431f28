import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfstatarb import backtest as bt
from mfstatarb.errors import DegenerateInputError, InputError
from mfstatarb.jttw import discount_increments

from conftest import bdays
from oracles import SCRIPTED_PATHS, ledger_matches, run_scripted, scripted_prices


@pytest.mark.parametrize("name", list(SCRIPTED_PATHS))
def test_scripted_ledger(name):
    res, want = run_scripted(name)
    assert ledger_matches(res, want)


def test_scripted_mtm_sums_to_profit():
    for name in SCRIPTED_PATHS:
        res, _ = run_scripted(name)
        assert abs(res.pnl.values.sum() - res.total_profit) < 1e-12


def test_no_force_close_reports_unrealized():
    P = scripted_prices([-3.0, -2.0, -1.5])
    res = bt.simulate(P, bdays(len(P)), np.array([1.0, -1.0]), slice(0, 10), slice(10, 13), bt.SimConfig(force_close_at_end=False))
    assert res.trades == [] and abs(res.unrealized - 3.0 / 97.0) < 1e-12


def test_constant_formation_spread_is_degenerate():
    P = np.full((20, 2), 50.0)
    with pytest.raises(DegenerateInputError):
        bt.simulate(P, bdays(20), np.array([1.0, -1.0]), slice(0, 10), slice(10, 20))


def test_weights_examples():
    w = bt.weights_from_beta(np.array([1.0, -0.5]), bt.SHORT).w
    assert np.allclose(w, [-4 / 3, 2 / 3])
    w = bt.weights_from_beta(np.array([1.0, -1.0]), bt.LONG, np.array([52.5, 50.0])).w
    assert np.allclose(w, 2 * np.array([52.5, -50.0]) / 102.5)


@settings(max_examples=60, deadline=None)
@given(
    arrays(float, 3, elements=st.floats(-5, 5)).filter(lambda b: np.abs(b).max() > 1e-3),
    arrays(float, 3, elements=st.floats(1, 500)),
    st.sampled_from([bt.LONG, bt.SHORT]),
)
def test_gross_is_two(beta, prices, direction):
    w = bt.weights_from_beta(beta, direction, prices)
    assert abs(w.gross - 2.0) < 1e-12


def test_weights_reject_bad_input():
    with pytest.raises(InputError):
        bt.weights_from_beta(np.zeros(2), bt.LONG)
    with pytest.raises(InputError):
        bt.weights_from_beta(np.ones(2), "sideways")


def _trade(open_d, close_d, profit, name="p"):
    return bt.Trade(name, np.datetime64(open_d), np.datetime64(close_d), bt.LONG, -2.0, "reverted", profit)


def test_realized_distributed_examples():
    dates = bdays(6)
    pnl = bt.realized_distributed_pnl([_trade(dates[1], dates[4], 0.3)], dates)
    assert np.allclose(pnl.values, [0, 0, 0.1, 0.1, 0.1, 0])
    # overlapping trades: mean averages, sum adds
    trades = [_trade(dates[0], dates[2], 0.2, "a"), _trade(dates[1], dates[2], 0.4, "b")]
    mean = bt.realized_distributed_pnl(trades, dates).values
    total = bt.realized_distributed_pnl(trades, dates, combine="sum").values
    assert np.allclose(mean, [0, 0.1, 0.25, 0, 0, 0]) and np.allclose(total, [0, 0.1, 0.5, 0, 0, 0])
    with pytest.raises(InputError):
        bt.realized_distributed_pnl([_trade(dates[0], np.datetime64("2030-01-01"), 1.0)], dates)


def test_discounting():
    dates = bdays(3)
    rf = pd.Series([0.0, 0.0, 0.0], index=pd.DatetimeIndex(dates))
    assert np.allclose(discount_increments(np.ones(3), dates, rf), 1.0)
    rf = pd.Series([0.0252] * 3, index=pd.DatetimeIndex(dates))
    assert np.allclose(discount_increments(np.ones(3), dates, rf), 1.0001 ** -np.arange(1, 4))


def test_profit_histogram_centered():
    h = bt.profit_histogram([-0.01, 0.0, 0.02, 0.2])
    zero_bin = h[(h["lower"] < 0) & (h["upper"] > 0)]
    assert int(zero_bin["count"].iloc[0]) == 3 and h["count"].sum() == 4
