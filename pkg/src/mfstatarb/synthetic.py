"""Seeded synthetic universes with planted cointegrated groups.

Each planted group shares a geometric random-walk driver ``X``; member ``j``
trades at ``b_j * X + c_j + u_j`` where ``u_j`` is a stationary AR(1) with
standard deviation ``coint_noise_sd`` times the group's price level.  Group
members also share a latent factor profile, so they sit together in factor
space.  Remaining stocks are independent random walks with their own
profiles.  Tickers are shuffled so that group membership is not visible from
the ordering.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from .errors import InputError
from .market_data import FUNDAMENTAL_FIELDS, PRICE_FIELDS, RAW_FACTOR_NAMES, RawPanel, write_long_csv

DRIVER_VOL = 0.01
HALF_SPREAD = 0.0005
PROFILE_SCALE = 3.0
WITHIN_GROUP_SD = 0.05
DAILY_JITTER_SD = 0.01
REC_FIELDS = ("buy_recommendations", "sell_recommendations")


@dataclass(frozen=True)
class SyntheticSpec:
    n_stocks: int = 60
    n_groups: int = 10
    group_size: int = 3
    factor_dim: int = 6
    coint_noise_sd: float = 0.01
    horizon_days: int = 1000
    seed: int = 0
    ar_coef: float = 0.9
    riskfree_rate: float = 0.02
    start_date: str = "2010-01-04"

    def __post_init__(self):
        counts = (self.n_stocks, self.n_groups, self.group_size, self.factor_dim, self.horizon_days)
        if min(counts) < 1:
            raise InputError("all counts must be >= 1")
        if self.n_groups * self.group_size > self.n_stocks:
            raise InputError("n_groups * group_size exceeds n_stocks")
        if not 0 <= self.ar_coef < 1:
            raise InputError("ar_coef must be in [0, 1)")
        if self.coint_noise_sd <= 0:
            raise InputError("coint_noise_sd must be positive")


@dataclass(frozen=True)
class SyntheticUniverse:
    panel: RawPanel
    groups: list[tuple[str, ...]]  # planted groups, tickers sorted
    labels: dict[str, int]  # ticker -> group index, -1 for independent stocks
    profiles: np.ndarray  # ticker x factor_dim latent profile (time-constant part)
    centroids: np.ndarray  # group x factor_dim
    riskfree: pd.Series
    spec: SyntheticSpec


def business_days(start: str, n: int) -> np.ndarray:
    return pd.bdate_range(start=start, periods=n).values.astype("datetime64[D]")


def _ar1(rng: np.random.Generator, n: int, phi: float, sd: float) -> np.ndarray:
    eps = rng.standard_normal(n) * sd * np.sqrt(1.0 - phi * phi)
    u = np.empty(n)
    u[0] = rng.standard_normal() * sd
    for t in range(1, n):
        u[t] = phi * u[t - 1] + eps[t]
    return u


def generate_universe(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticUniverse:
    rng = np.random.default_rng(spec.seed)
    T, N, D = spec.horizon_days, spec.n_stocks, spec.factor_dim
    n_planted = spec.n_groups * spec.group_size

    centroids = rng.standard_normal((spec.n_groups, D)) * PROFILE_SCALE
    prices = np.empty((T, N))
    profiles = np.empty((N, D))
    slot_group = np.full(N, -1)
    for g in range(spec.n_groups):
        level = rng.uniform(20.0, 100.0)
        driver = level * np.exp(np.cumsum(rng.standard_normal(T) * DRIVER_VOL))
        for m in range(spec.group_size):
            j = g * spec.group_size + m
            b = rng.uniform(0.95, 1.05)
            c = rng.uniform(-0.05, 0.05) * level
            noise = _ar1(rng, T, spec.ar_coef, spec.coint_noise_sd * level)
            prices[:, j] = b * driver + c + noise
            profiles[j] = centroids[g] + rng.standard_normal(D) * WITHIN_GROUP_SD
            slot_group[j] = g
    for j in range(n_planted, N):
        level = rng.uniform(20.0, 100.0)
        prices[:, j] = level * np.exp(np.cumsum(rng.standard_normal(T) * DRIVER_VOL))
        profiles[j] = rng.standard_normal(D) * PROFILE_SCALE
    prices = np.maximum(prices, 0.01)

    # latent profile -> observed fundamentals, constant per stock plus daily jitter
    loadings = rng.standard_normal((D, len(FUNDAMENTAL_FIELDS))) / np.sqrt(D)
    base = profiles @ loadings
    factors = np.empty((T, N, len(RAW_FACTOR_NAMES)))
    for k, name in enumerate(FUNDAMENTAL_FIELDS):
        jitter = rng.standard_normal((T, N)) * DAILY_JITTER_SD
        if name in ("market_cap", "shares_outstanding"):
            offset = 22.0 if name == "market_cap" else 18.0
            factors[:, :, k] = np.exp(offset + base[:, k] + jitter)
        elif name in REC_FIELDS:
            factors[:, :, k] = np.clip(np.round(5.0 + 2.0 * base[:, k]), 0.0, None)
        else:
            factors[:, :, k] = base[:, k] + jitter
    off = len(FUNDAMENTAL_FIELDS)
    factors[:, :, off + PRICE_FIELDS.index("close")] = prices
    factors[:, :, off + PRICE_FIELDS.index("ask")] = prices * (1 + HALF_SPREAD)
    factors[:, :, off + PRICE_FIELDS.index("bid")] = prices * (1 - HALF_SPREAD)

    # shuffle slots so ticker order says nothing about membership
    perm = rng.permutation(N)
    width = len(str(N - 1))
    tickers = [f"S{i:0{width}d}" for i in range(N)]
    prices = prices[:, perm]
    factors = factors[:, perm, :]
    profiles = profiles[perm]
    groups_of = slot_group[perm]

    dates = business_days(spec.start_date, T)
    panel = RawPanel(dates=dates, tickers=tickers, prices=prices, factors=factors, factor_names=list(RAW_FACTOR_NAMES))
    labels = {t: int(g) for t, g in zip(tickers, groups_of)}
    groups = [tuple(sorted(t for t, g in labels.items() if g == k)) for k in range(spec.n_groups)]
    riskfree = pd.Series(np.full(T, spec.riskfree_rate), index=pd.DatetimeIndex(dates), name="rate")
    return SyntheticUniverse(panel, groups, labels, profiles, centroids, riskfree, spec)


def write_csvs(u: SyntheticUniverse, out_dir: str | Path) -> dict[str, Path]:
    """Emit prices.csv, factors.csv, riskfree.csv and groups.csv in the loader's formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = u.panel
    col = {n: i for i, n in enumerate(p.factor_names)}
    paths = {
        "prices": out / "prices.csv",
        "factors": out / "factors.csv",
        "riskfree": out / "riskfree.csv",
        "groups": out / "groups.csv",
    }
    write_long_csv(paths["prices"], p.dates, p.tickers, {f: p.factors[:, :, col[f]] for f in PRICE_FIELDS})
    write_long_csv(paths["factors"], p.dates, p.tickers, {f: p.factors[:, :, col[f]] for f in FUNDAMENTAL_FIELDS})
    rf = pd.DataFrame({"date": pd.DatetimeIndex(p.dates).strftime("%Y-%m-%d"), "rate": u.riskfree.to_numpy()})
    rf.to_csv(paths["riskfree"], index=False)
    pd.DataFrame({"ticker": list(u.labels), "group": list(u.labels.values())}).to_csv(paths["groups"], index=False)
    (out / "spec.json").write_text(pd.Series(asdict(u.spec)).to_json(indent=2) + "\n")
    return paths


def is_planted(tickers: Iterable[str], labels: dict[str, int]) -> bool:
    """True when every ticker belongs to the same planted group."""
    g = {labels.get(t, -1) for t in tickers}
    return len(g) == 1 and -1 not in g


def _tickers(c) -> tuple[str, ...]:
    return tuple(c.tickers if hasattr(c, "tickers") else c)


def groups_recovered(candidates, groups: list[tuple[str, ...]]) -> float:
    """Share of planted groups whose members all appear together in some candidate."""
    sets = [set(_tickers(c)) for c in candidates]
    if not groups:
        return 0.0
    return sum(any(set(g) <= s for s in sets) for g in groups) / len(groups)


def candidate_precision(candidates, labels: dict[str, int]) -> float:
    """Fraction of candidates drawn entirely from one planted group; 0 for an empty list."""
    cands = list(candidates)
    if not cands:
        return 0.0
    good = sum(is_planted(_tickers(c), labels) for c in cands)
    return good / len(cands)
