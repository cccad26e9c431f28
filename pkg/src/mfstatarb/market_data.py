"""Loading, cleaning and normalizing the per-stock factor panel.

Input files are long-format CSVs with a header ``date,ticker,field,value``:

* prices file: fields ``close``, ``ask``, ``bid``
* factors file: the sixteen fundamental/statistical fields in ``FUNDAMENTAL_FIELDS``

Risk-free rates come as a two-column ``date,rate`` CSV with annualized
decimal rates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DegenerateFactorError, DomainError, EmptyUniverseError, InputError, SchemaError

logger = logging.getLogger(__name__)

PRICE_FIELDS = ("close", "ask", "bid")

FUNDAMENTAL_FIELDS = (
    "volatility_60d",
    "shares_outstanding",
    "sales_growth",
    "rsi",
    "price_to_book",
    "price_to_sales",
    "price_to_ebitda",
    "pe_ratio",
    "normalized_roe",
    "market_cap",
    "free_cash_flow_growth",
    "cash_flow_growth",
    "dividend_per_share",
    "analyst_rating",
    "sell_recommendations",
    "buy_recommendations",
)

# Price (close), ask and bid are factors too; 19 in total.
RAW_FACTOR_NAMES = FUNDAMENTAL_FIELDS + PRICE_FIELDS

LONG_COLUMNS = ("date", "ticker", "field", "value")


@dataclass(frozen=True)
class RawPanel:
    """Dense-shaped panel with NaN marking missing cells."""

    dates: np.ndarray  # datetime64[D], strictly increasing
    tickers: list[str]
    prices: np.ndarray  # date x ticker, close
    factors: np.ndarray  # date x ticker x factor
    factor_names: list[str] = field(default_factory=lambda: list(RAW_FACTOR_NAMES))

    def __post_init__(self):
        if len(self.dates) > 1 and not np.all(np.diff(self.dates) > np.timedelta64(0, "D")):
            raise InputError("dates must be strictly increasing")
        if self.prices.shape != (len(self.dates), len(self.tickers)):
            raise InputError("price matrix shape does not match dates x tickers")
        if self.factors.shape != (len(self.dates), len(self.tickers), len(self.factor_names)):
            raise InputError("factor tensor shape does not match dates x tickers x factors")
        present = self.prices[~np.isnan(self.prices)]
        if np.any(present <= 0):
            raise DomainError("prices must be strictly positive")


@dataclass(frozen=True)
class CleanUniverse(RawPanel):
    """A RawPanel with no missing cells."""

    def __post_init__(self):
        super().__post_init__()
        if np.isnan(self.prices).any() or np.isnan(self.factors).any():
            raise InputError("clean universe must be dense")

    def window_index(self, window: tuple) -> slice:
        return window_slice(self.dates, window)

    def price_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.prices, index=pd.DatetimeIndex(self.dates), columns=self.tickers)


@dataclass(frozen=True)
class NormalizedFactorMatrix:
    tickers: list[str]
    factor_names: list[str]
    X: np.ndarray  # ticker x factor, z-scored columns (ddof=1)


@dataclass(frozen=True)
class PeriodSplit:
    """Formation and trading windows, each a half-open ``[start, end)`` date range."""

    formation: tuple[np.datetime64, np.datetime64]
    trading: tuple[np.datetime64, np.datetime64]

    def __post_init__(self):
        f0, f1 = (np.datetime64(d, "D") for d in self.formation)
        t0, t1 = (np.datetime64(d, "D") for d in self.trading)
        if not (f0 < f1 and t0 < t1):
            raise InputError("period ranges must be non-empty")
        if f1 > t0:
            raise InputError("formation window must end before trading starts")
        object.__setattr__(self, "formation", (f0, f1))
        object.__setattr__(self, "trading", (t0, t1))

    @classmethod
    def from_strings(cls, formation: Sequence[str], trading: Sequence[str]) -> "PeriodSplit":
        return cls(tuple(np.datetime64(d, "D") for d in formation), tuple(np.datetime64(d, "D") for d in trading))

    @classmethod
    def halves(cls, dates: np.ndarray) -> "PeriodSplit":
        """First half of ``dates`` forms, second half trades."""
        mid = len(dates) // 2
        end = dates[-1] + np.timedelta64(1, "D")
        return cls((dates[0], dates[mid]), (dates[mid], end))


def window_slice(dates: np.ndarray, window: tuple) -> slice:
    start, end = (np.datetime64(d, "D") for d in window)
    lo = int(np.searchsorted(dates, start, side="left"))
    hi = int(np.searchsorted(dates, end, side="left"))
    if hi <= lo:
        raise InputError(f"window [{start}, {end}) contains no dates")
    return slice(lo, hi)


def _read_long(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path} does not exist")
    try:
        df = pd.read_csv(path, dtype={"ticker": str, "field": str}, comment="#")
    except pd.errors.EmptyDataError:
        raise InputError(f"{path} is empty") from None
    if df.empty:
        raise InputError(f"{path} has no data rows")
    missing = [c for c in LONG_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path} is missing columns {missing}")
    df["value"] = pd.to_numeric(df["value"], errors="coerce")
    df["date"] = pd.to_datetime(df["date"], errors="coerce")
    bad = df["date"].isna().sum()
    if bad:
        logger.warning("%s: dropping %d rows with unparseable dates", path, bad)
        df = df[df["date"].notna()]
    return df


def load_panel(
    prices_path: str | Path,
    factors_path: str | Path,
    schema: Mapping[str, str] | None = None,
) -> RawPanel:
    """Read the two long-format CSVs into a :class:`RawPanel`.

    ``schema`` maps canonical field names (``RAW_FACTOR_NAMES``) to the
    labels used in the files; identity when omitted. Unparseable or blank
    values become NaN.
    """
    schema = dict(schema or {})
    label_of = {name: schema.get(name, name) for name in RAW_FACTOR_NAMES}
    prices = _read_long(prices_path)
    factors = _read_long(factors_path)
    long = pd.concat([prices, factors], ignore_index=True)

    present = set(long["field"].unique())
    for name in RAW_FACTOR_NAMES:
        if label_of[name] not in present:
            raise SchemaError(f"required field {label_of[name]!r} ({name}) not found")
    canonical = {label: name for name, label in label_of.items()}
    long = long[long["field"].isin(canonical)]
    long = long.assign(field=long["field"].map(canonical))

    dups = long.duplicated(["date", "ticker", "field"], keep="last")
    if dups.any():
        logger.warning("dropping %d duplicated (date, ticker, field) rows", int(dups.sum()))
        long = long[~dups]

    dates = np.sort(long["date"].unique()).astype("datetime64[D]")
    tickers = sorted(long["ticker"].unique())
    cube = (
        long.set_index(["date", "field", "ticker"])["value"]
        .unstack("ticker")
        .reindex(columns=tickers)
    )
    tensor = np.full((len(dates), len(tickers), len(RAW_FACTOR_NAMES)), np.nan)
    idx_dates = pd.DatetimeIndex(dates)
    for k, name in enumerate(RAW_FACTOR_NAMES):
        block = cube.xs(name, level="field").reindex(idx_dates)
        tensor[:, :, k] = block.to_numpy(dtype=float)
    close = tensor[:, :, RAW_FACTOR_NAMES.index("close")].copy()
    return RawPanel(dates=dates, tickers=tickers, prices=close, factors=tensor, factor_names=list(RAW_FACTOR_NAMES))


def clean(panel: RawPanel) -> CleanUniverse:
    """Drop non-trading days, then every ticker with any missing cell."""
    if len(panel.dates) == 0 or len(panel.tickers) == 0:
        raise InputError("panel is empty")
    trading_day = ~np.all(np.isnan(panel.prices), axis=1)
    prices = panel.prices[trading_day]
    factors = panel.factors[trading_day]
    complete = ~(np.isnan(prices).any(axis=0) | np.isnan(factors).any(axis=(0, 2)))
    if not complete.any():
        raise EmptyUniverseError("no ticker is complete over the full span")
    dropped = [t for t, ok in zip(panel.tickers, complete) if not ok]
    if dropped:
        logger.info("clean: dropping %d incomplete tickers", len(dropped))
    return CleanUniverse(
        dates=panel.dates[trading_day],
        tickers=[t for t, ok in zip(panel.tickers, complete) if ok],
        prices=prices[:, complete],
        factors=factors[:, complete, :],
        factor_names=list(panel.factor_names),
    )


def rec_score(buy: np.ndarray, sell: np.ndarray) -> np.ndarray:
    buy = np.asarray(buy, dtype=float)
    sell = np.asarray(sell, dtype=float)
    if np.any(buy < 0) or np.any(sell < 0):
        raise DomainError("recommendation counts must be non-negative")
    total = buy + sell
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(total > 0, (buy - sell) / np.where(total > 0, total, 1.0), 0.0)
    return score


def transform_factors(universe: CleanUniverse) -> CleanUniverse:
    """Merge buy/sell counts into one score and log the size factors (19 -> 18 factors)."""
    names = list(universe.factor_names)
    if "buy_recommendations" not in names:
        raise SchemaError("universe is already transformed")
    F = universe.factors
    col = {n: i for i, n in enumerate(names)}
    for size in ("market_cap", "shares_outstanding"):
        if np.any(F[:, :, col[size]] <= 0):
            raise DomainError(f"{size} must be positive to take logarithms")

    score = rec_score(F[:, :, col["buy_recommendations"]], F[:, :, col["sell_recommendations"]])
    out_names: list[str] = []
    columns = []
    for n in names:
        if n == "sell_recommendations":
            continue
        if n == "buy_recommendations":
            out_names.append("rec_score")
            columns.append(score)
        elif n in ("market_cap", "shares_outstanding"):
            out_names.append(f"log_{n}")
            columns.append(np.log(F[:, :, col[n]]))
        else:
            out_names.append(n)
            columns.append(F[:, :, col[n]])
    return replace(universe, factors=np.stack(columns, axis=2), factor_names=out_names)


def zscore_columns(A: np.ndarray, names: Sequence[str]) -> np.ndarray:
    mean = A.mean(axis=0)
    sd = A.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(mean), 1.0)
    for j, s in enumerate(sd):
        if not s > 1e-12 * scale[j]:
            raise DegenerateFactorError(names[j])
    Z = (A - mean) / sd
    # second pass removes residual rounding in mean/sd
    Z = Z - Z.mean(axis=0)
    return Z / Z.std(axis=0, ddof=1)


def snapshot_and_standardize(universe: CleanUniverse, window: tuple) -> NormalizedFactorMatrix:
    """Time-average each factor over ``window`` then z-score across tickers."""
    if len(universe.tickers) < 2:
        raise InputError("need at least two tickers to standardize")
    sl = universe.window_index(window)
    avg = universe.factors[sl].mean(axis=0)
    X = zscore_columns(avg, universe.factor_names)
    return NormalizedFactorMatrix(tickers=list(universe.tickers), factor_names=list(universe.factor_names), X=X)


def load_riskfree(path: str | Path) -> pd.Series:
    """Annualized decimal rates indexed by date."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path} does not exist")
    df = pd.read_csv(path, comment="#")
    if not {"date", "rate"} <= set(df.columns):
        raise SchemaError(f"{path} needs columns date,rate")
    s = pd.Series(pd.to_numeric(df["rate"], errors="coerce").to_numpy(), index=pd.to_datetime(df["date"]))
    return s.dropna().sort_index()


def write_long_csv(path: str | Path, dates: np.ndarray, tickers: Sequence[str], values: Mapping[str, np.ndarray]) -> None:
    """Write date x ticker matrices per field to one long-format CSV."""
    frames = []
    idx = pd.DatetimeIndex(dates)
    for name, M in values.items():
        df = pd.DataFrame(M, index=idx, columns=list(tickers))
        df.index.name = "date"
        long = df.stack(future_stack=True).rename("value").reset_index()
        long.columns = ["date", "ticker", "value"]
        long.insert(2, "field", name)
        frames.append(long)
    out = pd.concat(frames, ignore_index=True)
    out["date"] = out["date"].dt.strftime("%Y-%m-%d")
    out.to_csv(path, index=False, float_format="%.10g")
