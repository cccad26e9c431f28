"""K-means (Lloyd iterations, k-means++ seeding, best of several restarts)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .factors import FeatureSpace


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    K: int
    seed: int
    tickers: list[str]
    distances: np.ndarray  # each point's distance to its own centroid
    inertia_history: list[float] = field(default_factory=list)  # winning restart, per iteration
    restart_inertias: list[float] = field(default_factory=list)

    def sizes(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.K).tolist()


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _plus_plus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [int(rng.integers(n))]
    d2 = ((X - X[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[centers].copy()


def _repair_empty(X, labels, C, K):
    counts = np.bincount(labels, minlength=K)
    for k in np.flatnonzero(counts == 0):
        d = ((X - C[labels]) ** 2).sum(axis=1)
        donors = counts[labels] > 1
        if not donors.any():
            break
        d = np.where(donors, d, -1.0)
        far = int(np.argmax(d))
        counts[labels[far]] -= 1
        labels[far] = k
        counts[k] = 1
        C[k] = X[far]
    return labels


def _lloyd(X: np.ndarray, C: np.ndarray, max_iter: int):
    K = len(C)
    labels = None
    history = []
    for _ in range(max_iter):
        # argmin keeps the lowest index on ties
        new = np.argmin(_sq_dist(X, C), axis=1)
        new = _repair_empty(X, new, C, K)
        C = np.array([X[new == k].mean(axis=0) if np.any(new == k) else C[k] for k in range(K)])
        history.append(float(((X - C[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            labels = new
            break
        labels = new
    return labels, C, history


def kmeans(
    F: FeatureSpace | np.ndarray,
    K: int,
    restarts: int = 10,
    seed: int = 0,
    max_iter: int = 300,
    tickers: list[str] | None = None,
) -> ClusterAssignment:
    if isinstance(F, FeatureSpace):
        X = np.asarray(F.feature_matrix, dtype=float)
        tickers = list(F.tickers)
    else:
        X = np.asarray(F, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise InputError("feature matrix is empty")
    n = len(X)
    tickers = tickers if tickers is not None else [str(i) for i in range(n)]
    if not 1 <= K <= n:
        raise InputError(f"K={K} must lie in [1, {n}]")
    if restarts < 1:
        raise InputError("restarts must be >= 1")

    best = None
    inertias = []
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        labels, C, history = _lloyd(X, _plus_plus(X, K, rng), max_iter)
        inertia = history[-1]
        inertias.append(inertia)
        if best is None or inertia < best[0]:
            best = (inertia, labels, C, history)

    inertia, labels, C, history = best
    dist = np.sqrt(((X - C[labels]) ** 2).sum(axis=1))
    return ClusterAssignment(
        labels=labels,
        centroids=C,
        inertia=inertia,
        K=K,
        seed=seed,
        tickers=tickers,
        distances=dist,
        inertia_history=history,
        restart_inertias=inertias,
    )
