"""Statistical-arbitrage test on discounted incremental trading profits.

Model for the discounted increments ``v_i`` (i = 1..n)::

    v_i = mu * i**theta + sigma * i**lam * z_i,    z_i = phi * z_{i-1} + eps_i

with ``eps`` iid standard normal and ``z`` started from its stationary
distribution.  A strategy is a statistical arbitrage when jointly
``mu > 0``, ``lam < 0`` and ``theta > max(lam - 1/2, -1)``.  The test
statistic is the smallest of the three standardized constraint margins
(Min-t); its null distribution is obtained by parametric bootstrap from
the model refitted with ``mu = 0`` and ``lam = 0``.

Internally parameters are ``(mu, theta, lam, log sigma, atanh phi)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numba import njit
from scipy import signal

from .errors import DegenerateSeriesError, FitFailureError, InputError

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 252
ALPHA = 0.05
MIN_LENGTH = 30
MIN_REPLICATIONS = 200
PARAM_NAMES = ("mu", "theta", "lambda_vol", "log_sigma", "atanh_phi")
EXPONENT_BOUND = 5.0
C_BOUND = 12.0

# (theta, lambda) starting pairs; mu and sigma starts are solved per pair,
# phi starts at the clipped lag-1 autocorrelation.
START_GRID = ((0.0, 0.0), (0.0, -0.3), (0.0, 0.3), (0.5, 0.0), (-0.5, 0.0), (0.3, -0.3))


def discount_increments(values: np.ndarray, dates: np.ndarray, riskfree: pd.Series | None) -> np.ndarray:
    """``v_i = pnl_i * prod_{j<=i} (1 + r_j/252)^-1`` with annualized rates ``r``.

    Missing rate dates are carried forward from the nearest prior date.
    """
    values = np.asarray(values, dtype=float)
    if riskfree is None:
        return values.copy()
    idx = pd.DatetimeIndex(np.asarray(dates).astype("datetime64[D]"))
    rf = riskfree.sort_index()
    aligned = rf.reindex(rf.index.union(idx)).ffill().reindex(idx)
    if aligned.isna().any():
        n_bad = int(aligned.isna().sum())
        logger.warning("risk-free rate missing before first quote on %d dates; using first available rate", n_bad)
        aligned = aligned.bfill()
    missing = (~idx.isin(rf.index)).sum()
    if missing:
        logger.warning("risk-free rate carried forward on %d dates", int(missing))
    r = aligned.to_numpy(dtype=float)
    factors = np.cumprod(1.0 / (1.0 + r / DAYS_PER_YEAR))
    return values * factors


@njit(cache=True)
def _loglik(p, v, L):
    mu, th, lam, s, c = p[0], p[1], p[2], p[3], p[4]
    phi = np.tanh(c)
    r = np.sqrt(1.0 - phi * phi)
    n = v.shape[0]
    acc = 0.0
    sum_lh = 0.0
    z_prev = 0.0
    for i in range(n):
        lh = s + lam * L[i]
        z = (v[i] - mu * np.exp(th * L[i])) * np.exp(-lh)
        e = z * r if i == 0 else z - phi * z_prev
        acc += e * e
        sum_lh += lh
        z_prev = z
    return -0.5 * n * np.log(2.0 * np.pi) + np.log(r) - sum_lh - 0.5 * acc


@njit(cache=True)
def _eval(p, v, L):
    """Log-likelihood, its gradient, and the exact Hessian of the negative log-likelihood."""
    mu, th, lam, s, c = p[0], p[1], p[2], p[3], p[4]
    phi = np.tanh(c)
    r = np.sqrt(1.0 - phi * phi)
    dphi = 1.0 - phi * phi
    d2phi = -2.0 * phi * dphi
    dr = -r * phi
    d2r = r * (2.0 * phi * phi - 1.0)
    n = v.shape[0]
    grad = np.zeros(5)
    hess = np.zeros((5, 5))
    dz = np.zeros(4)
    dzp = np.zeros(4)
    d2z = np.zeros((4, 4))
    d2zp = np.zeros((4, 4))
    de = np.zeros(5)
    d2e = np.zeros((5, 5))
    acc = 0.0
    sum_lh = 0.0
    sum_L = 0.0
    zp = 0.0
    for i in range(n):
        Li = L[i]
        lh = s + lam * Li
        q = np.exp(-lh)
        g = np.exp(th * Li)
        gq = g * q
        z = (v[i] - mu * g) * q
        dz[0] = -gq
        dz[1] = -mu * Li * gq
        dz[2] = -Li * z
        dz[3] = -z
        d2z[0, 0] = 0.0
        d2z[0, 1] = -Li * gq
        d2z[0, 2] = Li * gq
        d2z[0, 3] = gq
        d2z[1, 1] = -mu * Li * Li * gq
        d2z[1, 2] = mu * Li * Li * gq
        d2z[1, 3] = mu * Li * gq
        d2z[2, 2] = Li * Li * z
        d2z[2, 3] = Li * z
        d2z[3, 3] = z
        for a in range(4):
            for b in range(a):
                d2z[a, b] = d2z[b, a]
        if i == 0:
            e = r * z
            for a in range(4):
                de[a] = r * dz[a]
                for b in range(4):
                    d2e[a, b] = r * d2z[a, b]
                d2e[a, 4] = dr * dz[a]
                d2e[4, a] = d2e[a, 4]
            de[4] = dr * z
            d2e[4, 4] = d2r * z
        else:
            e = z - phi * zp
            for a in range(4):
                de[a] = dz[a] - phi * dzp[a]
                for b in range(4):
                    d2e[a, b] = d2z[a, b] - phi * d2zp[a, b]
                d2e[a, 4] = -dphi * dzp[a]
                d2e[4, a] = d2e[a, 4]
            de[4] = -dphi * zp
            d2e[4, 4] = -d2phi * zp
        for a in range(5):
            grad[a] -= e * de[a]
            for b in range(a, 5):
                hess[a, b] += de[a] * de[b] + e * d2e[a, b]
        acc += e * e
        sum_lh += lh
        sum_L += Li
        zp = z
        for a in range(4):
            dzp[a] = dz[a]
            for b in range(4):
                d2zp[a, b] = d2z[a, b]
    grad[2] -= sum_L
    grad[3] -= n
    grad[4] -= phi
    hess[4, 4] += dphi
    for a in range(5):
        for b in range(a):
            hess[a, b] = hess[b, a]
    ll = -0.5 * n * np.log(2.0 * np.pi) + np.log(r) - sum_lh - 0.5 * acc
    return ll, grad, hess


@njit(cache=True)
def _clip(p):
    q = p.copy()
    q[1] = min(max(q[1], -EXPONENT_BOUND), EXPONENT_BOUND)
    q[2] = min(max(q[2], -EXPONENT_BOUND), EXPONENT_BOUND)
    q[4] = min(max(q[4], -C_BOUND), C_BOUND)
    return q


@njit(cache=True)
def _lm(p0, free, v, L, max_iter, tol):
    """Damped Newton ascent on the free coordinates; only improving steps are taken."""
    p = _clip(p0)
    ll, g, info = _eval(p, v, L)
    idx = np.flatnonzero(free)
    m = idx.shape[0]
    lam_damp = 1e-6
    converged = False
    it = 0
    for it in range(max_iter):
        M = np.empty((m, m))
        rhs = np.empty(m)
        for a in range(m):
            rhs[a] = g[idx[a]]
            for b in range(m):
                M[a, b] = info[idx[a], idx[b]]
        stepped = False
        while lam_damp < 1e12:
            A = M.copy()
            for a in range(m):
                A[a, a] += lam_damp * (abs(M[a, a]) + 1e-12)
            ok = True
            for a in range(m):
                if A[a, a] <= 0.0:
                    ok = False
            if not ok:
                lam_damp = max(lam_damp * 8.0, 1.0)
                continue
            step = np.linalg.solve(A, rhs)
            trial = p.copy()
            for a in range(m):
                trial[idx[a]] += step[a]
            trial = _clip(trial)
            ll_t = _loglik(trial, v, L)
            if np.isfinite(ll_t) and ll_t > ll:
                gain = ll_t - ll
                p = trial
                ll, g, info = _eval(p, v, L)
                lam_damp = max(lam_damp * 0.1, 1e-8)
                stepped = True
                if gain < tol * (1.0 + abs(ll)):
                    converged = True
                break
            lam_damp *= 8.0
        if not stepped:
            converged = True
            break
        if converged:
            break
    return p, ll, it + 1, converged


_GRID = np.array(START_GRID)


@njit(cache=True)
def _starts(v, L):
    n = v.shape[0]
    mean = v.mean()
    num = 0.0
    den = 0.0
    for i in range(n):
        d = v[i] - mean
        den += d * d
        if i > 0:
            num += d * (v[i - 1] - mean)
    acf1 = num / den if den > 0 else 0.0
    c0 = np.arctanh(min(max(acf1, -0.9), 0.9))
    out = np.empty((_GRID.shape[0], 5))
    for k in range(_GRID.shape[0]):
        th, lam = _GRID[k, 0], _GRID[k, 1]
        g = np.exp(th * L)
        mu0 = (v @ g) / (g @ g)
        resid = (v - mu0 * g) * np.exp(-lam * L)
        sd = max(resid.std(), 1e-12)
        out[k, 0] = mu0
        out[k, 1] = th
        out[k, 2] = lam
        out[k, 3] = np.log(sd)
        out[k, 4] = c0
    return out


@njit(cache=True)
def _multistart(v, L, starts, free, screen_iter, max_iter, tol):
    """Short ascent from every start, then polish the two best to convergence."""
    k = starts.shape[0]
    start_ll = np.empty(k)
    screened = np.empty((k, 5))
    screened_ll = np.empty(k)
    for j in range(k):
        start_ll[j] = _loglik(_clip(starts[j]), v, L)
        p, ll, _, _ = _lm(starts[j], free, v, L, screen_iter, tol)
        screened[j] = p
        screened_ll[j] = ll if np.isfinite(ll) else -np.inf
    order = np.argsort(-screened_ll)
    best_p = screened[order[0]].copy()
    best_ll = -np.inf
    best_conv = False
    for j in order[: min(2, k)]:
        if not np.isfinite(screened_ll[j]):
            continue
        p, ll, _, conv = _lm(screened[j], free, v, L, max_iter, tol)
        if ll > best_ll:
            best_p, best_ll, best_conv = p, ll, conv
    return best_p, best_ll, best_conv, start_ll


@njit(cache=True)
def _min_t_at(p, info):
    """Min-t from a fit and its observed information; -inf when a variance is unusable."""
    cov = np.linalg.inv(info)
    mu, th, lam = p[0], p[1], p[2]
    out = np.inf
    for num, var in (
        (mu, cov[0, 0]),
        (-lam, cov[2, 2]),
        (th - lam + 0.5, cov[1, 1] + cov[2, 2] - 2.0 * cov[1, 2]) if lam >= -0.5 else (th + 1.0, cov[1, 1]),
    ):
        if not np.isfinite(var) or var <= 0.0:
            return -np.inf
        out = min(out, num / np.sqrt(var))
    return out


@njit(cache=True)
def _replicate(v, L, screen_iter, max_iter, tol):
    free = np.ones(5, dtype=np.bool_)
    p, ll, _, _ = _multistart(v, L, _starts(v, L), free, screen_iter, max_iter, tol)
    if not np.isfinite(ll):
        return -np.inf
    _, _, info = _eval(p, v, L)
    return _min_t_at(p, info)


@dataclass(frozen=True)
class JttwFit:
    mu: float
    theta: float
    lambda_vol: float
    sigma: float
    phi: float
    loglik: float
    cov: np.ndarray  # over (mu, theta, lambda_vol, log sigma, atanh phi)
    converged: bool
    start_logliks: tuple[float, ...] = ()

    @property
    def params(self) -> np.ndarray:
        return np.array([self.mu, self.theta, self.lambda_vol, np.log(self.sigma), np.arctanh(self.phi)])

    def as_dict(self) -> dict[str, float]:
        return {
            "mu": self.mu,
            "theta": self.theta,
            "lambda_vol": self.lambda_vol,
            "sigma": self.sigma,
            "phi": self.phi,
            "loglik": self.loglik,
        }


def _validate(v) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim != 1 or len(v) < MIN_LENGTH:
        raise InputError(f"series must be 1-d with at least {MIN_LENGTH} points")
    if not np.all(np.isfinite(v)):
        raise InputError("series contains non-finite values")
    if np.ptp(v) == 0:
        raise DegenerateSeriesError("series is constant (all zeros?)")
    return v


def _log_index(n: int) -> np.ndarray:
    return np.log(np.arange(1, n + 1, dtype=float))


def start_points(v: np.ndarray) -> list[np.ndarray]:
    """Initial parameter vectors, one per (theta, lambda) pair of ``START_GRID``.

    ``mu`` and ``sigma`` are least-squares values given the pair; ``phi``
    starts at the clipped lag-1 autocorrelation.
    """
    v = np.ascontiguousarray(v, dtype=float)
    return list(_starts(v, _log_index(len(v))))


def _covariance(p, v, L) -> np.ndarray:
    _, _, info = _eval(p, v, L)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info, hermitian=True)
    return 0.5 * (cov + cov.T)


SCREEN_ITER = 6
MAX_ITER = 40
TOL = 1e-10


def _fit_array(v: np.ndarray, L: np.ndarray, starts, free=None):
    free = np.ones(5, dtype=np.bool_) if free is None else free
    grid = np.ascontiguousarray(np.vstack(starts), dtype=float)
    p, ll, conv, start_ll = _multistart(v, L, grid, free, SCREEN_ITER, MAX_ITER, TOL)
    best = (p, ll, conv) if np.isfinite(ll) else None
    return best, [float(x) for x in start_ll]


def fit_jttw(v, starts: list[np.ndarray] | None = None) -> JttwFit:
    """Maximum-likelihood fit, best of several damped Newton runs."""
    v = _validate(v)
    L = _log_index(len(v))
    starts = starts if starts is not None else start_points(v)
    best, start_ll = _fit_array(v, L, starts)
    if best is None:
        raise FitFailureError("no start produced a finite likelihood")
    p, ll, conv = best
    return JttwFit(
        mu=float(p[0]),
        theta=float(p[1]),
        lambda_vol=float(p[2]),
        sigma=float(np.exp(p[3])),
        phi=float(np.tanh(p[4])),
        loglik=float(ll),
        cov=_covariance(p, v, L),
        converged=bool(conv),
        start_logliks=tuple(start_ll),
    )


def loglik(v, mu, theta, lambda_vol, sigma, phi) -> float:
    v = np.ascontiguousarray(v, dtype=float)
    p = np.array([mu, theta, lambda_vol, np.log(sigma), np.arctanh(phi)])
    return float(_loglik(p, v, _log_index(len(v))))


def _safe_t(num: float, var: float) -> float:
    if not np.isfinite(var) or var <= 0:
        return -np.inf
    return num / np.sqrt(var)


def constraint_stats(mu, theta, lam, cov) -> dict[str, float]:
    """Standardized margins of mu > 0, lam < 0 and theta > max(lam - 1/2, -1)."""
    t_mu = _safe_t(mu, cov[0, 0])
    t_lam = _safe_t(-lam, cov[2, 2])
    if lam - 0.5 >= -1.0:
        t_theta = _safe_t(theta - lam + 0.5, cov[1, 1] + cov[2, 2] - 2.0 * cov[1, 2])
    else:
        t_theta = _safe_t(theta + 1.0, cov[1, 1])
    return {"t_mu": t_mu, "t_lambda": t_lam, "t_theta": t_theta}


def min_t(fit: JttwFit) -> tuple[float, dict[str, float]]:
    subs = constraint_stats(fit.mu, fit.theta, fit.lambda_vol, fit.cov)
    return min(subs.values()), subs


def simulate_jttw(n: int, mu: float, theta: float, lambda_vol: float, sigma: float, phi: float, rng) -> np.ndarray:
    i = np.arange(1, n + 1, dtype=float)
    eps = rng.standard_normal(n)
    eps[0] /= np.sqrt(1.0 - phi * phi)
    z = signal.lfilter([1.0], [1.0, -phi], eps)
    return mu * i**theta + sigma * i**lambda_vol * z


@dataclass(frozen=True)
class StatArbTestResult:
    p_value: float
    reject: bool
    statistic: float
    sub_statistics: dict[str, float]
    mc_replications: int
    fit: JttwFit
    null_sigma: float
    null_phi: float
    alpha: float = ALPHA
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def decision(self) -> str:
        return "reject" if self.reject else "fail-to-reject"


def _null_fit(v: np.ndarray, L: np.ndarray) -> tuple[float, float]:
    """ML estimates of (sigma, phi) with mu = 0 and lam = 0."""
    free = np.array([False, False, False, True, True])
    d = v - v.mean()
    acf1 = float(d[1:] @ d[:-1]) / float(d @ d)
    best = None
    for c0 in (0.0, float(np.arctanh(np.clip(acf1, -0.9, 0.9)))):
        p0 = np.array([0.0, 0.0, 0.0, np.log(max(v.std(), 1e-12)), c0])
        p, ll, _, _ = _lm(p0, free, v, L, 200, 1e-12)
        if best is None or ll > best[1]:
            best = (p, ll)
    p = best[0]
    return float(np.exp(p[3])), float(np.tanh(p[4]))


def _replicate_min_t(v: np.ndarray, L: np.ndarray) -> float:
    try:
        return float(_replicate(v, L, SCREEN_ITER, MAX_ITER, TOL))
    except np.linalg.LinAlgError:
        return -np.inf


def _null_replications(v: np.ndarray, seed: int, B: int):
    """Yield Min-t of each null replication, in seed order."""
    n = len(v)
    L = _log_index(n)
    sigma0, phi0 = _null_fit(v, L)
    children = np.random.SeedSequence(seed).spawn(B)
    for child in children:
        rng = np.random.default_rng(child)
        yield _replicate_min_t(simulate_jttw(n, 0.0, 0.0, 0.0, sigma0, phi0, rng), L)


def run_statarb_test(
    v,
    fit: JttwFit | None = None,
    B: int = 500,
    seed: int = 0,
    alpha: float = ALPHA,
) -> StatArbTestResult:
    """Min-t test with a parametric-bootstrap p-value.

    ``p_value`` is the share of the ``B`` null replications whose Min-t is
    at least the observed one.
    """
    if B < MIN_REPLICATIONS:
        raise InputError(f"B must be at least {MIN_REPLICATIONS}")
    v = _validate(v)
    fit = fit if fit is not None else fit_jttw(v)
    stat, subs = min_t(fit)
    sigma0, phi0 = _null_fit(v, _log_index(len(v)))
    exceed = sum(1 for m in _null_replications(v, seed, B) if m >= stat)
    p = exceed / B
    return StatArbTestResult(
        p_value=p,
        reject=p < alpha,
        statistic=stat,
        sub_statistics=subs,
        mc_replications=B,
        fit=fit,
        null_sigma=sigma0,
        null_phi=phi0,
        alpha=alpha,
        notes={
            "constraints": "mu>0; lambda<0; theta>max(lambda-1/2,-1)",
            "p_value": "parametric bootstrap under mu=0, lambda=0 (refitted sigma, phi)",
        },
    )


def statarb_rejects(v, B: int = 500, seed: int = 0, alpha: float = ALPHA) -> bool:
    """Same decision as ``run_statarb_test(v, B=B, seed=seed).reject``.

    Stops drawing replications as soon as the remaining ones can no longer
    change the decision; meant for calibration studies.
    """
    if B < MIN_REPLICATIONS:
        raise InputError(f"B must be at least {MIN_REPLICATIONS}")
    v = _validate(v)
    stat, _ = min_t(fit_jttw(v))
    limit = int(np.ceil(alpha * B))  # p < alpha  <=>  exceed < limit
    exceed = 0
    for drawn, m in enumerate(_null_replications(v, seed, B), start=1):
        if m >= stat:
            exceed += 1
            if exceed >= limit:
                return False
        if exceed + (B - drawn) < limit:
            return True
    return True
