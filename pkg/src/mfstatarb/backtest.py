"""Spread-trading simulation over formation and trading windows.

Positions hold share quantities proportional to the cointegrating vector,
scaled so that gross dollar exposure at the open is $2.  Profits are in
dollars on that $2 book; execution is frictionless at closing prices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping, Sequence

import numpy as np
import pandas as pd

from .cointegration import JohansenResult, johansen_test
from .errors import DegenerateInputError, InputError, StatArbError
from .jttw import discount_increments
from .market_data import CleanUniverse, PeriodSplit, window_slice
from .portfolios import CandidatePortfolio

logger = logging.getLogger(__name__)

GROSS = 2.0
LONG, SHORT = "long-spread", "short-spread"
EXIT_REASONS = ("reverted", "bailout", "period-end")


@dataclass(frozen=True)
class SimConfig:
    open_k: float = 2.0
    bailout_loss: float = 0.6
    force_close_at_end: bool = True

    def __post_init__(self):
        if self.open_k <= 0 or self.bailout_loss <= 0:
            raise InputError("open_k and bailout_loss must be positive")


@dataclass(frozen=True)
class SpreadModel:
    beta: np.ndarray
    mu_s: float
    sigma_s: float


@dataclass(frozen=True)
class PositionWeights:
    w: np.ndarray  # signed dollar exposure per ticker at the open

    @property
    def gross(self) -> float:
        return float(np.abs(self.w).sum())


@dataclass(frozen=True)
class Trade:
    portfolio: str
    open_date: np.datetime64
    close_date: np.datetime64
    direction: str
    entry_spread_z: float
    exit_reason: str
    profit: float
    weights: tuple[float, ...] = ()
    quantities: tuple[float, ...] = ()


@dataclass(frozen=True)
class PnLSeries:
    dates: np.ndarray
    values: np.ndarray
    kind: Literal["mark-to-market", "realized-distributed"]
    discounted: np.ndarray | None = None

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"date": pd.DatetimeIndex(self.dates).strftime("%Y-%m-%d"), "value": self.values})
        if self.discounted is not None:
            df["discounted"] = self.discounted
        return df


@dataclass
class SimResult:
    trades: list[Trade]
    pnl: PnLSeries
    model: SpreadModel
    active: np.ndarray  # True on days the position accrues P&L
    unrealized: float | None = None  # open position at window end, if not force-closed

    @property
    def total_profit(self) -> float:
        return float(sum(t.profit for t in self.trades))


def weights_from_beta(beta: np.ndarray, direction: str, prices: np.ndarray | None = None) -> PositionWeights:
    """Dollar exposures with gross value 2.

    Without ``prices`` this is ``±2·beta/Σ|beta|``.  With open prices the
    exposure of ticker i is proportional to ``beta_i · p_i`` so that share
    holdings are proportional to ``beta``.  Long-spread is ``+``.
    """
    beta = np.asarray(beta, dtype=float)
    if not np.any(beta != 0):
        raise InputError("beta must be nonzero")
    if direction not in (LONG, SHORT):
        raise InputError(f"unknown direction {direction!r}")
    expo = beta if prices is None else beta * np.asarray(prices, dtype=float)
    sign = 1.0 if direction == LONG else -1.0
    return PositionWeights(w=sign * GROSS * expo / np.abs(expo).sum())


def spread_model(prices: np.ndarray, beta: np.ndarray) -> SpreadModel:
    s = prices @ beta
    sigma = float(s.std(ddof=1)) if len(s) > 1 else 0.0
    if not sigma > 0:
        raise DegenerateInputError("formation spread has zero variance")
    return SpreadModel(beta=np.asarray(beta, dtype=float), mu_s=float(s.mean()), sigma_s=sigma)


def simulate(
    prices: np.ndarray,
    dates: np.ndarray,
    beta: np.ndarray,
    formation: tuple | slice,
    trading: tuple | slice,
    cfg: SimConfig = SimConfig(),
    label: str = "",
) -> SimResult:
    """Trade one spread over ``trading`` using statistics frozen on ``formation``.

    ``prices`` is T x m (the portfolio's columns) aligned with ``dates``.
    Windows are ``[start, end)`` date pairs or index slices.
    """
    P = np.asarray(prices, dtype=float)
    fs = formation if isinstance(formation, slice) else window_slice(dates, formation)
    ts = trading if isinstance(trading, slice) else window_slice(dates, trading)
    model = spread_model(P[fs], beta)
    z = (P @ model.beta - model.mu_s) / model.sigma_s

    n_days = ts.stop - ts.start
    pnl = np.zeros(n_days)
    active = np.zeros(n_days, dtype=bool)
    trades: list[Trade] = []
    pos = None  # (open_abs_index, direction, quantities, weights, entry_z)
    for t in range(n_days):
        a = ts.start + t
        last = t == n_days - 1
        if pos is not None:
            open_a, direction, q, w, entry_z = pos
            pnl[t] = float(q @ (P[a] - P[a - 1]))
            active[t] = True
            cum = float(q @ (P[a] - P[open_a]))
            if (direction == SHORT and z[a] <= 0) or (direction == LONG and z[a] >= 0):
                reason = "reverted"
            elif cum <= -cfg.bailout_loss:
                reason = "bailout"
            elif last and cfg.force_close_at_end:
                reason = "period-end"
            else:
                continue
            trades.append(
                Trade(
                    portfolio=label,
                    open_date=dates[open_a],
                    close_date=dates[a],
                    direction=direction,
                    entry_spread_z=entry_z,
                    exit_reason=reason,
                    profit=cum,
                    weights=tuple(w),
                    quantities=tuple(q),
                )
            )
            pos = None
            continue
        if last and cfg.force_close_at_end:
            break
        if z[a] >= cfg.open_k:
            direction = SHORT
        elif z[a] <= -cfg.open_k:
            direction = LONG
        else:
            continue
        w = weights_from_beta(model.beta, direction, P[a]).w
        q = w / P[a]
        pos = (a, direction, q, w, float(z[a]))

    unrealized = None
    if pos is not None:
        unrealized = float(pos[2] @ (P[ts.stop - 1] - P[pos[0]]))
    series = PnLSeries(dates=np.asarray(dates[ts]), values=pnl, kind="mark-to-market")
    return SimResult(trades=trades, pnl=series, model=model, active=active, unrealized=unrealized)


@dataclass
class FilteredPortfolio:
    portfolio: CandidatePortfolio
    johansen: JohansenResult
    formation_profit: float

    @property
    def beta(self) -> np.ndarray:
        return self.johansen.beta


@dataclass
class Rejection:
    portfolio: CandidatePortfolio
    reason: str


def _columns(universe: CleanUniverse, tickers: Sequence[str]) -> list[int]:
    pos = {t: i for i, t in enumerate(universe.tickers)}
    return [pos[t] for t in tickers]


def formation_filter(
    candidates: Sequence[CandidatePortfolio],
    universe: CleanUniverse,
    formation: tuple,
    cfg: SimConfig = SimConfig(),
    lag_order: int = 1,
    det_spec: str = "restricted-constant",
) -> tuple[list[FilteredPortfolio], list[Rejection], int]:
    """Keep candidates passing Johansen and trading profitably in-sample.

    Returns (kept, rejected, number that passed Johansen).
    """
    fs = universe.window_index(formation)
    kept, rejected = [], []
    n_passed = 0
    for cand in candidates:
        P = universe.prices[:, _columns(universe, cand.tickers)]
        try:
            jr = johansen_test(P[fs], lag_order=lag_order, det_spec=det_spec)
        except StatArbError as exc:
            rejected.append(Rejection(cand, f"johansen-error: {exc}"))
            continue
        if not jr.passed:
            rejected.append(Rejection(cand, "johansen"))
            continue
        n_passed += 1
        try:
            sim = simulate(P, universe.dates, jr.beta, fs, fs, cfg, label=cand.label)
        except StatArbError as exc:
            rejected.append(Rejection(cand, f"degenerate-spread: {exc}"))
            continue
        if sim.total_profit > 0:
            kept.append(FilteredPortfolio(cand, jr, sim.total_profit))
        else:
            rejected.append(Rejection(cand, "formation-loss"))
    return kept, rejected, n_passed


@dataclass
class StrategyResult:
    strategy: str
    candidates: list[CandidatePortfolio]
    n_passed_johansen: int
    traded: list[FilteredPortfolio]
    rejected: list[Rejection]
    sims: dict[str, SimResult]
    trading_dates: np.ndarray

    @property
    def trades(self) -> list[Trade]:
        return [t for fp in self.traded for t in self.sims[fp.portfolio.label].trades]


def run_strategy(
    strategy: str,
    candidates: Sequence[CandidatePortfolio],
    universe: CleanUniverse,
    split: PeriodSplit,
    cfg: SimConfig = SimConfig(),
    lag_order: int = 1,
    det_spec: str = "restricted-constant",
) -> StrategyResult:
    kept, rejected, n_passed = formation_filter(candidates, universe, split.formation, cfg, lag_order, det_spec)
    fs = universe.window_index(split.formation)
    ts = universe.window_index(split.trading)
    sims = {}
    for fp in kept:
        P = universe.prices[:, _columns(universe, fp.portfolio.tickers)]
        sims[fp.portfolio.label] = simulate(P, universe.dates, fp.beta, fs, ts, cfg, label=fp.portfolio.label)
    return StrategyResult(
        strategy=strategy,
        candidates=list(candidates),
        n_passed_johansen=n_passed,
        traded=kept,
        rejected=rejected,
        sims=sims,
        trading_dates=universe.dates[ts],
    )


def _combine(totals: np.ndarray, counts: np.ndarray, combine: str) -> np.ndarray:
    if combine == "sum":
        return totals
    if combine == "mean":
        return np.divide(totals, counts, out=np.zeros_like(totals), where=counts > 0)
    raise InputError(f"unknown combine rule {combine!r}")


def mark_to_market_pnl(result: StrategyResult, riskfree: pd.Series | None = None, combine: str = "mean") -> PnLSeries:
    """Strategy-level daily MTM P&L; ``mean`` averages over positions open that day."""
    n = len(result.trading_dates)
    totals, counts = np.zeros(n), np.zeros(n)
    for sim in result.sims.values():
        totals += sim.pnl.values
        counts += sim.active
    values = _combine(totals, counts, combine)
    disc = discount_increments(values, result.trading_dates, riskfree) if riskfree is not None else None
    return PnLSeries(dates=result.trading_dates, values=values, kind="mark-to-market", discounted=disc)


def realized_distributed_pnl(
    trades: Sequence[Trade],
    dates: np.ndarray,
    riskfree: pd.Series | None = None,
    combine: str = "mean",
) -> PnLSeries:
    """Spread each trade's realized profit evenly over its holding days.

    Holding days are those after the open up to and including the close.
    ``mean`` averages the daily amounts of the trades held that day; with
    non-overlapping trades it equals ``sum``.  ``discounted`` is filled when
    rates are given.
    """
    dates = np.asarray(dates).astype("datetime64[D]")
    n = len(dates)
    totals, counts = np.zeros(n), np.zeros(n)
    for tr in trades:
        lo = int(np.searchsorted(dates, np.datetime64(tr.open_date, "D")))
        hi = int(np.searchsorted(dates, np.datetime64(tr.close_date, "D")))
        if hi >= n or dates[hi] != np.datetime64(tr.close_date, "D") or hi <= lo:
            raise InputError(f"trade {tr.portfolio} {tr.open_date}..{tr.close_date} outside the window")
        span = slice(lo + 1, hi + 1)
        totals[span] += tr.profit / (hi - lo)
        counts[span] += 1
    values = _combine(totals, counts, combine)
    disc = discount_increments(values, dates, riskfree) if riskfree is not None else None
    return PnLSeries(dates=dates, values=values, kind="realized-distributed", discounted=disc)


REPORT_ROWS = (
    "Portfolios identified",
    "Average # of stocks per portfolio",
    "Portfolios passed Johansen test",
    "Portfolios that produce a net positive profit during formation period",
    "Portfolios that produce a net positive profit during trading period",
    "Total # of trades during trading period",
    "Total # of trades that produce a net positive profit during trading period",
    "Average net profit per trade",
    "Average net profit per portfolio",
    "Total net profit",
)


@dataclass
class StrategyReport:
    strategy: str
    values: dict[str, float | None]
    ratios: dict[str, float | None] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "strategy": self.strategy,
                "metric": list(REPORT_ROWS),
                "value": [self.values[r] for r in REPORT_ROWS],
                "ratio": [self.ratios.get(r) for r in REPORT_ROWS],
            }
        )


def _ratio(a: float, b: float) -> float | None:
    return a / b if b else None


def metrics(result: StrategyResult) -> StrategyReport:
    """Summary-table rows; undefined averages and ratios are ``None``."""
    n_id = len(result.candidates)
    n_form = len(result.traded)
    trades = result.trades
    port_profit = [result.sims[fp.portfolio.label].total_profit for fp in result.traded]
    n_trade_pos = sum(p > 0 for p in port_profit)
    wins = sum(t.profit > 0 for t in trades)
    total = float(sum(t.profit for t in trades))
    r = REPORT_ROWS
    values = {
        r[0]: n_id,
        r[1]: _ratio(sum(len(c.tickers) for c in result.candidates), n_id),
        r[2]: result.n_passed_johansen,
        r[3]: n_form,
        r[4]: n_trade_pos,
        r[5]: len(trades),
        r[6]: wins,
        r[7]: _ratio(total, len(trades)),
        r[8]: _ratio(total, n_form),
        r[9]: total,
    }
    ratios = {
        r[2]: _ratio(result.n_passed_johansen, n_id),
        r[3]: _ratio(n_form, result.n_passed_johansen),
        r[4]: _ratio(n_trade_pos, n_form),
        r[6]: _ratio(wins, len(trades)),
    }
    return StrategyReport(result.strategy, values, ratios)


@dataclass
class AdaptiveResult:
    midpoint: np.datetime64
    first: dict[str, StrategyResult]
    second: dict[str, StrategyResult]
    splits: tuple[PeriodSplit, PeriodSplit]


def adaptive_run(
    universe: CleanUniverse,
    select: Callable[[tuple], Mapping[str, list[CandidatePortfolio]]],
    split: PeriodSplit,
    cfg: SimConfig = SimConfig(),
    midpoint: np.datetime64 | None = None,
    relearn_window: tuple | None = None,
    lag_order: int = 1,
    det_spec: str = "restricted-constant",
) -> AdaptiveResult:
    """Trade the first half, close everything, re-select, trade the second half.

    ``select(formation_window)`` returns candidates per strategy.  The
    re-selection window defaults to the first trading half.
    """
    ts = universe.window_index(split.trading)
    if ts.stop - ts.start < 2:
        raise InputError("trading window too short to split")
    if midpoint is None:
        midpoint = universe.dates[ts.start + (ts.stop - ts.start) // 2]
    midpoint = np.datetime64(midpoint, "D")
    first_split = PeriodSplit(split.formation, (split.trading[0], midpoint))
    relearn = relearn_window if relearn_window is not None else (split.trading[0], midpoint)
    second_split = PeriodSplit(relearn, (midpoint, split.trading[1]))
    # half one must close out, whatever the caller's config says
    half_cfg = SimConfig(cfg.open_k, cfg.bailout_loss, force_close_at_end=True)

    first = {
        name: run_strategy(name, cands, universe, first_split, half_cfg, lag_order, det_spec)
        for name, cands in select(split.formation).items()
    }
    second = {
        name: run_strategy(name, cands, universe, second_split, cfg, lag_order, det_spec)
        for name, cands in select(relearn).items()
    }
    return AdaptiveResult(midpoint=midpoint, first=first, second=second, splits=(first_split, second_split))


def profit_histogram(profits: Sequence[float], width: float = 0.05) -> pd.DataFrame:
    """Counts in fixed-width bins, one bin centered on zero."""
    profits = np.asarray(profits, dtype=float)
    if len(profits) == 0:
        return pd.DataFrame({"bin_center": [], "lower": [], "upper": [], "count": []})
    k = np.floor(profits / width + 0.5).astype(int)
    ks = np.arange(k.min(), k.max() + 1)
    counts = np.array([(k == j).sum() for j in ks])
    centers = np.round(ks * width, 10)
    return pd.DataFrame({"bin_center": centers, "lower": centers - width / 2, "upper": centers + width / 2, "count": counts})


def trades_frame(trades: Sequence[Trade]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "portfolio": [t.portfolio for t in trades],
            "open_date": [str(np.datetime64(t.open_date, "D")) for t in trades],
            "close_date": [str(np.datetime64(t.close_date, "D")) for t in trades],
            "direction": [t.direction for t in trades],
            "entry_z": [t.entry_spread_z for t in trades],
            "exit_reason": [t.exit_reason for t in trades],
            "profit": [t.profit for t in trades],
        }
    )
