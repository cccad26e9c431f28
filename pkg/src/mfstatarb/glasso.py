"""Sparse inverse correlation estimation by graphical lasso.

The solver works on the primal: each sweep visits every row/column ``j`` and
minimizes the penalized negative log-likelihood exactly over that
row/column with everything else fixed.  With ``A`` the inverse of the
remaining block, the column update is a lasso in ``theta_12`` with
quadratic form ``S_jj * A`` and the diagonal follows in closed form,
``theta_jj = 1/S_jj + theta_12' A theta_12``.  Every block step can only
lower the objective, and the iterate stays positive definite.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateSeriesError, InputError

logger = logging.getLogger(__name__)

NONZERO_TOL = 1e-8


@dataclass(frozen=True)
class PriceCorrelation:
    S: np.ndarray
    tickers: list[str]


@dataclass(frozen=True)
class PrecisionEstimate:
    theta: np.ndarray
    rho: float
    iterations: int
    converged: bool
    tickers: list[str]
    objective_history: list[float] = field(default_factory=list)

    def support(self) -> np.ndarray:
        return np.abs(self.theta) > NONZERO_TOL

    def offdiag_nonzeros_per_row(self) -> float:
        sup = self.support()
        return float((sup.sum() - np.trace(sup)) / len(sup))


def correlation_from_prices(
    prices: np.ndarray,
    tickers: list[str],
    use_returns: bool = False,
) -> PriceCorrelation:
    """Pearson correlation of price levels (or of simple returns)."""
    P = np.asarray(prices, dtype=float)
    if use_returns:
        P = P[1:] / P[:-1] - 1.0
    T, n = P.shape
    if T < n + 2:
        raise InputError(f"window has {T} rows, need at least {n + 2}")
    if np.isnan(P).any():
        raise InputError("prices must be dense over the window")
    sd = P.std(axis=0)
    for j in np.flatnonzero(sd <= 1e-12 * np.maximum(np.abs(P.mean(axis=0)), 1.0)):
        raise DegenerateSeriesError(f"price series for {tickers[j]} is constant")
    S = np.corrcoef(P, rowvar=False)
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return PriceCorrelation(S=S, tickers=list(tickers))


def objective(S: np.ndarray, theta: np.ndarray, rho: float) -> float:
    """log det(theta) - tr(S theta) - rho * sum of |off-diagonal| (maximized)."""
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return -np.inf
    off = np.abs(theta).sum() - np.abs(np.diag(theta)).sum()
    return float(logdet - np.sum(S * theta) - rho * off)


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def _sweep(theta, W, S, rho, inner_max, inner_tol):
    p = theta.shape[0]
    m = p - 1
    idx = np.empty(m, dtype=np.int64)
    A = np.empty((m, m))
    beta = np.empty(m)
    Qb = np.empty(m)
    s12 = np.empty(m)
    for j in range(p):
        c = 0
        for i in range(p):
            if i != j:
                idx[c] = i
                c += 1
        wjj = W[j, j]
        for a in range(m):
            ia = idx[a]
            for b in range(m):
                ib = idx[b]
                A[a, b] = W[ia, ib] - W[ia, j] * W[ib, j] / wjj
            beta[a] = theta[ia, j]
            s12[a] = S[ia, j]
        s22 = S[j, j]
        for a in range(m):
            acc = 0.0
            for b in range(m):
                acc += A[a, b] * beta[b]
            Qb[a] = s22 * acc
        for _ in range(inner_max):
            delta = 0.0
            for k in range(m):
                qkk = s22 * A[k, k]
                old = beta[k]
                g = Qb[k] - qkk * old + s12[k]
                new = -_soft(g, rho) / qkk
                if new != old:
                    d = new - old
                    for a in range(m):
                        Qb[a] += s22 * A[a, k] * d
                    beta[k] = new
                    if abs(d) > delta:
                        delta = abs(d)
            if delta < inner_tol:
                break
        # Ab = A beta; new diagonal and inverse blocks in closed form
        Ab = np.zeros(m)
        for a in range(m):
            acc = 0.0
            for b in range(m):
                acc += A[a, b] * beta[b]
            Ab[a] = acc
        quad = 0.0
        for a in range(m):
            quad += beta[a] * Ab[a]
        for a in range(m):
            ia = idx[a]
            theta[ia, j] = beta[a]
            theta[j, ia] = beta[a]
            W[ia, j] = -s22 * Ab[a]
            W[j, ia] = -s22 * Ab[a]
            for b in range(m):
                W[ia, idx[b]] = A[a, b] + s22 * Ab[a] * Ab[b]
        theta[j, j] = 1.0 / s22 + quad
        W[j, j] = s22


def graphical_lasso(
    S: PriceCorrelation | np.ndarray,
    rho: float,
    tol: float = 1e-6,
    max_iter: int = 500,
    theta_init: np.ndarray | None = None,
    tickers: list[str] | None = None,
) -> PrecisionEstimate:
    """Maximize log det(theta) - tr(S theta) - rho * sum_{i != j} |theta_ij|.

    Converged when the largest elementwise change between sweeps is below
    ``tol``; a non-converged result is returned with ``converged=False``.
    """
    if isinstance(S, PriceCorrelation):
        tickers = S.tickers
        S = S.S
    S = np.ascontiguousarray(S, dtype=float)
    n = S.shape[0]
    tickers = tickers if tickers is not None else [str(i) for i in range(n)]
    if rho < 0:
        raise InputError("rho must be non-negative")
    if tol <= 0:
        raise InputError("tol must be positive")
    if not np.allclose(S, S.T, atol=1e-10):
        raise InputError("S must be symmetric")
    if np.linalg.eigvalsh(S).min() < -1e-6:
        raise InputError("S is not positive semidefinite")
    if np.any(np.diag(S) <= 0):
        raise InputError("S must have a positive diagonal")

    if theta_init is None:
        theta = np.diag(1.0 / np.diag(S))
    else:
        theta = np.array(theta_init, dtype=float)
    W = np.linalg.inv(theta)
    W = 0.5 * (W + W.T)
    history = [objective(S, theta, rho)]
    converged = False
    sweeps = 0
    inner_tol = min(tol, 1e-8) * 0.1
    for sweeps in range(1, max_iter + 1):
        prev = theta.copy()
        _sweep(theta, W, S, rho, 1000, inner_tol)
        theta = 0.5 * (theta + theta.T)
        W = np.linalg.inv(theta)
        W = 0.5 * (W + W.T)
        history.append(objective(S, theta, rho))
        if np.max(np.abs(theta - prev)) < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"graphical lasso did not converge in {max_iter} sweeps (rho={rho:.4g})", RuntimeWarning)
    return PrecisionEstimate(
        theta=theta,
        rho=float(rho),
        iterations=sweeps,
        converged=converged,
        tickers=list(tickers),
        objective_history=history,
    )


def max_offdiag(S: np.ndarray) -> float:
    off = np.abs(S - np.diag(np.diag(S)))
    return float(off.max())


def tune_rho(
    S: PriceCorrelation,
    target: tuple[float, float] = (2.0, 5.0),
    tol: float = 1e-5,
    max_iter: int = 500,
    max_bisections: int = 40,
) -> PrecisionEstimate:
    """Bisect rho until the mean off-diagonal nonzeros per row lands in ``target``.

    Returns the estimate at the accepted rho (or the closest one tried).
    """
    lo_t, hi_t = target
    lo, hi = 0.0, max_offdiag(S.S)
    best = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for _ in range(max_bisections):
            rho = 0.5 * (lo + hi)
            est = graphical_lasso(S, rho, tol=tol, max_iter=max_iter)
            density = est.offdiag_nonzeros_per_row()
            gap = 0.0 if lo_t <= density <= hi_t else min(abs(density - lo_t), abs(density - hi_t))
            if best is None or gap < best[0]:
                best = (gap, est)
            if gap == 0.0:
                break
            if density > hi_t:
                lo = rho
            else:
                hi = rho
    est = best[1]
    if not est.converged:
        logger.warning("glasso at rho=%.4g stopped before convergence", est.rho)
    return est
