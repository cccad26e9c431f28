"""Johansen trace test for cointegration rank.

Critical values are the 95% trace quantiles of MacKinnon, Haug & Michelis
(1999), "Numerical distribution functions of likelihood ratio tests for
cointegration", J. Applied Econometrics 14(5), indexed by the number of
common trends n - r (1..4).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg

from .errors import DegenerateInputError, InputError

DetSpec = Literal["none", "restricted-constant", "constant", "trend"]

TRACE_CV_95: dict[str, tuple[float, ...]] = {
    "none": (4.1296, 12.3212, 24.2761, 40.1749),
    "restricted-constant": (9.1645, 20.2618, 35.1928, 53.9350),
    "constant": (3.8415, 15.4943, 29.7961, 47.8545),
    "trend": (3.8415, 18.3985, 35.0116, 55.2459),
}

MIN_OBS = 50


@dataclass(frozen=True)
class JohansenResult:
    eigenvalues: np.ndarray
    trace_stats: np.ndarray
    critical_values: np.ndarray
    rank: int
    beta: np.ndarray
    nobs: int

    @property
    def passed(self) -> bool:
        return self.rank >= 1


def _residualize(Y: np.ndarray, Z: np.ndarray | None) -> np.ndarray:
    if Z is None or Z.shape[1] == 0:
        return Y
    coef, *_ = np.linalg.lstsq(Z, Y, rcond=None)
    return Y - Z @ coef


def normalize_beta(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
    return v / v[nz[0]]


def johansen_test(
    prices: np.ndarray,
    lag_order: int = 1,
    det_spec: DetSpec = "restricted-constant",
) -> JohansenResult:
    """Trace test on a T x n matrix of levels.

    ``lag_order`` is the number of lagged differences in the VECM.
    ``det_spec``: ``"restricted-constant"`` puts the intercept inside the
    cointegrating relation (levels without drift); ``"constant"`` and
    ``"trend"`` enter an intercept (plus linear trend) unrestricted in the
    VAR, which suits drifting levels; ``"none"`` has no deterministic terms.
    """
    y = np.asarray(prices, dtype=float)
    if y.ndim != 2:
        raise InputError("prices must be a T x n matrix")
    T, n = y.shape
    if not 1 <= n <= 4:
        raise InputError(f"portfolio size {n} outside the tabulated range 1..4")
    if T < MIN_OBS:
        raise InputError(f"need at least {MIN_OBS} observations, got {T}")
    if np.isnan(y).any():
        raise InputError("prices must be dense")
    if det_spec not in TRACE_CV_95:
        raise InputError(f"unknown det_spec {det_spec!r}")
    if lag_order < 0:
        raise InputError("lag_order must be >= 0")

    dy = np.diff(y, axis=0)
    k = lag_order
    Z0 = dy[k:]
    Z1 = y[k:-1]
    m = len(Z0)
    cols = [dy[k - i : len(dy) - i] for i in range(1, k + 1)]
    if det_spec in ("constant", "trend"):
        cols.append(np.ones((m, 1)))
    if det_spec == "trend":
        cols.append(np.arange(1, m + 1, dtype=float)[:, None])
    if det_spec == "restricted-constant":
        Z1 = np.hstack([Z1, np.ones((m, 1))])
    Z2 = np.hstack(cols) if cols else None

    R0 = _residualize(Z0, Z2)
    R1 = _residualize(Z1, Z2)
    S00 = R0.T @ R0 / m
    S11 = R1.T @ R1 / m
    S01 = R0.T @ R1 / m
    try:
        S00_inv_S01 = linalg.solve(S00, S01, assume_a="pos")
        M = S01.T @ S00_inv_S01
        M = 0.5 * (M + M.T)
        vals, vecs = linalg.eigh(M, S11)
    except (linalg.LinAlgError, ValueError) as exc:
        raise DegenerateInputError(f"moment matrix is singular: {exc}") from None
    order = np.argsort(vals)[::-1][:n]
    vals = np.clip(vals[order], 0.0, 1.0 - 1e-15)
    vecs = vecs[:n, order]

    log_terms = np.log1p(-vals)
    trace = -m * np.cumsum(log_terms[::-1])[::-1]
    cv = np.array(TRACE_CV_95[det_spec][:n][::-1])
    rank = n
    for r in range(n):
        if trace[r] < cv[r]:
            rank = r
            break
    return JohansenResult(
        eigenvalues=vals,
        trace_stats=trace,
        critical_values=cv,
        rank=rank,
        beta=normalize_beta(vecs[:, 0]),
        nobs=m,
    )
