"""PCA over the normalized factor matrix and feature-space selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd

from .errors import InputError
from .market_data import NormalizedFactorMatrix


@dataclass(frozen=True)
class PcaResult:
    eigenvalues: np.ndarray  # descending
    loadings: np.ndarray  # factor x component, unit-norm columns
    explained_ratio: np.ndarray
    source: NormalizedFactorMatrix

    @property
    def scores(self) -> np.ndarray:
        return self.source.X @ self.loadings

    def to_frame(self) -> pd.DataFrame:
        """Scree data plus loadings, one row per component."""
        df = pd.DataFrame(self.loadings.T, columns=self.source.factor_names)
        df.insert(0, "explained_ratio", self.explained_ratio)
        df.insert(0, "eigenvalue", self.eigenvalues)
        df.insert(0, "component", np.arange(len(self.eigenvalues)))
        return df


@dataclass(frozen=True)
class FeatureSpace:
    mode: Literal["raw", "pc"]
    k: int
    tickers: list[str]
    feature_matrix: np.ndarray  # ticker x k
    provenance: list  # factor names (raw) or component indices (pc)

    def __post_init__(self):
        if self.k < 1 or self.feature_matrix.shape[1] != self.k:
            raise InputError("feature matrix must have k >= 1 columns")


def pca(X: NormalizedFactorMatrix) -> PcaResult:
    n, p = X.X.shape
    if n < 2 or p < 2:
        raise InputError("PCA needs at least two tickers and two factors")
    cov = np.cov(X.X, rowvar=False, ddof=1)
    vals, vecs = np.linalg.eigh(cov)
    # eigh is ascending; stable sort keeps index order on ties
    order = np.argsort(-vals, kind="stable")
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    vecs /= np.linalg.norm(vecs, axis=0)
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(p)])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    total = vals.sum()
    explained = vals / total if total > 0 else np.full(p, 1.0 / p)
    return PcaResult(eigenvalues=vals, loadings=vecs, explained_ratio=explained, source=X)


def _check_k(k: int, p: int) -> None:
    if not 1 <= k <= p:
        raise InputError(f"k must lie in [1, {p}], got {k}")


def select_components(p: PcaResult, k: int) -> FeatureSpace:
    _check_k(k, p.loadings.shape[1])
    F = p.source.X @ p.loadings[:, :k]
    return FeatureSpace(mode="pc", k=k, tickers=list(p.source.tickers), feature_matrix=F, provenance=list(range(k)))


def select_raw_factors(p: PcaResult, X: NormalizedFactorMatrix | None, k: int) -> FeatureSpace:
    """Greedy pick: each component in turn contributes its dominant unused factor."""
    X = X if X is not None else p.source
    _check_k(k, p.loadings.shape[0])
    chosen: list[int] = []
    for c in range(p.loadings.shape[1]):
        if len(chosen) == k:
            break
        mags = np.abs(p.loadings[:, c])
        for f in np.argsort(-mags, kind="stable"):
            if f not in chosen:
                chosen.append(int(f))
                break
    names = [X.factor_names[f] for f in chosen]
    return FeatureSpace(mode="raw", k=k, tickers=list(X.tickers), feature_matrix=X.X[:, chosen], provenance=names)


def feature_space(X: NormalizedFactorMatrix, mode: str, k: int) -> tuple[FeatureSpace, PcaResult]:
    result = pca(X)
    if mode == "raw":
        return select_raw_factors(result, X, k), result
    if mode == "pc":
        return select_components(result, k), result
    raise InputError(f"unknown factor mode {mode!r}")
