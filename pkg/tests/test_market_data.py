import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfstatarb import market_data as md
from mfstatarb.errors import DegenerateFactorError, DomainError, EmptyUniverseError, InputError, SchemaError

from conftest import bdays


def _write(tmp_path, n_dates=3, tickers=("AAA", "BBB"), drop=None, blank=None):
    dates = pd.bdate_range("2021-01-04", periods=n_dates).strftime("%Y-%m-%d")
    rng = np.random.default_rng(0)
    prices, factors = [], []
    for d in dates:
        for t in tickers:
            for f in md.PRICE_FIELDS:
                if f == drop:
                    continue
                v = "" if blank == (d, t, f) else f"{rng.uniform(10, 20):.4f}"
                prices.append(f"{d},{t},{f},{v}")
            for f in md.FUNDAMENTAL_FIELDS:
                v = "" if blank == (d, t, f) else f"{rng.uniform(1, 5):.4f}"
                factors.append(f"{d},{t},{f},{v}")
    p, q = tmp_path / "prices.csv", tmp_path / "factors.csv"
    p.write_text("date,ticker,field,value\n" + "\n".join(prices) + "\n")
    q.write_text("date,ticker,field,value\n" + "\n".join(factors) + "\n")
    return p, q


def _panel(T=6, N=5, seed=0):
    rng = np.random.default_rng(seed)
    F = rng.uniform(1, 5, size=(T, N, len(md.RAW_FACTOR_NAMES)))
    prices = F[:, :, md.RAW_FACTOR_NAMES.index("close")].copy()
    return md.RawPanel(bdays(T), [f"T{i}" for i in range(N)], prices, F)


def test_load_small_complete_file(tmp_path):
    p, q = _write(tmp_path)
    panel = md.load_panel(p, q)
    assert len(panel.dates) == 3 and panel.tickers == ["AAA", "BBB"]
    assert panel.factors.shape == (3, 2, 19)
    assert not np.isnan(panel.prices).any()


def test_blank_price_cell_is_missing(tmp_path):
    p, q = _write(tmp_path, blank=("2021-01-05", "BBB", "close"))
    panel = md.load_panel(p, q)
    assert np.isnan(panel.prices[1, 1])
    assert np.isnan(panel.prices).sum() == 1


def test_missing_close_field_is_schema_error(tmp_path):
    p, q = _write(tmp_path, drop="close")
    with pytest.raises(SchemaError):
        md.load_panel(p, q)


def test_empty_file_is_input_error(tmp_path):
    p, q = _write(tmp_path)
    p.write_text("")
    with pytest.raises(InputError):
        md.load_panel(p, q)


def test_schema_mapping(tmp_path):
    p, q = _write(tmp_path)
    q.write_text(q.read_text().replace(",pe_ratio,", ",PE,"))
    with pytest.raises(SchemaError):
        md.load_panel(p, q)
    panel = md.load_panel(p, q, schema={"pe_ratio": "PE"})
    assert not np.isnan(panel.factors).any()


def test_clean_drops_ticker_with_one_gap():
    panel = _panel()
    panel.factors[2, 3, md.RAW_FACTOR_NAMES.index("pe_ratio")] = np.nan
    u = md.clean(panel)
    assert u.tickers == ["T0", "T1", "T2", "T4"]


def test_clean_dense_is_identity_and_idempotent():
    panel = _panel()
    u = md.clean(panel)
    assert np.array_equal(u.prices, panel.prices) and u.tickers == panel.tickers
    v = md.clean(u)
    assert np.array_equal(v.factors, u.factors) and v.tickers == u.tickers


def test_clean_drops_non_trading_day():
    panel = _panel()
    panel.prices[3, :] = np.nan
    panel.factors[3, :, :] = np.nan
    u = md.clean(panel)
    assert len(u.dates) == 5 and len(u.tickers) == 5


def test_clean_all_gappy_is_empty_universe():
    panel = _panel()
    for j in range(5):
        panel.factors[j, j, 0] = np.nan
    with pytest.raises(EmptyUniverseError):
        md.clean(panel)


def test_rec_score_examples():
    assert md.rec_score(np.array([10.0]), np.array([0.0]))[0] == 1.0
    assert md.rec_score(np.array([5.0]), np.array([5.0]))[0] == 0.0
    assert md.rec_score(np.array([0.0]), np.array([0.0]))[0] == 0.0


@given(
    arrays(float, 10, elements=st.floats(0, 1e6)),
    arrays(float, 10, elements=st.floats(0, 1e6)),
)
def test_rec_score_bounded(buy, sell):
    s = md.rec_score(buy, sell)
    assert np.all(s >= -1) and np.all(s <= 1)


def test_transform_factors():
    panel = _panel()
    col = md.RAW_FACTOR_NAMES.index("market_cap")
    panel.factors[:, :, col] = np.exp(10.0)
    u = md.transform_factors(md.clean(panel))
    assert len(u.factor_names) == 18
    assert "rec_score" in u.factor_names and "sell_recommendations" not in u.factor_names
    assert np.allclose(u.factors[:, :, u.factor_names.index("log_market_cap")], 10.0)
    assert u.tickers == panel.tickers and np.array_equal(u.dates, panel.dates)


def test_transform_rejects_nonpositive_size():
    panel = _panel()
    panel.factors[0, 0, md.RAW_FACTOR_NAMES.index("market_cap")] = 0.0
    with pytest.raises(DomainError):
        md.transform_factors(md.clean(panel))


def test_zscore_examples():
    z = md.zscore_columns(np.array([[1.0], [3.0]]), ["f"])
    assert np.allclose(z.ravel(), [-0.70710678, 0.70710678])
    z = md.zscore_columns(np.array([[0.0], [1.0], [2.0]]), ["f"])
    assert np.allclose(z.ravel(), [-1, 0, 1])
    with pytest.raises(DegenerateFactorError) as e:
        md.zscore_columns(np.array([[1.0, 2.0], [3.0, 2.0]]), ["a", "b"])
    assert e.value.factor == "b"


@settings(max_examples=50, deadline=None)
@given(arrays(float, (7, 4), elements=st.floats(-1e3, 1e3)))
def test_zscore_invariant(A):
    A = A + np.arange(7)[:, None] * np.array([1.0, 2.0, 3.0, 4.0])  # keep columns non-constant
    Z = md.zscore_columns(A, list("abcd"))
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(Z.std(axis=0, ddof=1) - 1) < 1e-10)


def test_snapshot_uses_window_average():
    u = md.transform_factors(md.clean(_panel(T=10)))
    win = (u.dates[2], u.dates[6])
    X = md.snapshot_and_standardize(u, win)
    avg = u.factors[2:6].mean(axis=0)
    assert np.allclose(X.X, md.zscore_columns(avg, u.factor_names))


def test_period_split():
    s = md.PeriodSplit.from_strings(["2020-01-01", "2021-01-01"], ["2021-01-01", "2022-01-01"])
    assert s.formation[1] <= s.trading[0]
    with pytest.raises(InputError):
        md.PeriodSplit.from_strings(["2020-01-01", "2021-06-01"], ["2021-01-01", "2022-01-01"])
    h = md.PeriodSplit.halves(bdays(10))
    assert md.window_slice(bdays(10), h.trading) == slice(5, 10)


def test_riskfree_loader(tmp_path):
    f = tmp_path / "rf.csv"
    f.write_text("date,rate\n2020-01-02,0.01\n2020-01-01,0.02\n")
    s = md.load_riskfree(f)
    assert list(s.to_numpy()) == [0.02, 0.01]
