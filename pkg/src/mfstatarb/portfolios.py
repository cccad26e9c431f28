"""Candidate portfolio generation: clustering, glasso and the two hybrids."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import pandas as pd

from .clustering import ClusterAssignment
from .errors import InputError
from .glasso import NONZERO_TOL, PrecisionEstimate

STRATEGIES = ("clustering", "glasso", "clustering-glasso", "glasso-clustering")
MIN_SIZE, MAX_SIZE = 2, 4


@dataclass(frozen=True)
class CandidatePortfolio:
    tickers: tuple[str, ...]
    strategy: str
    score: float = 0.0
    source_row: int = -1

    def __post_init__(self):
        if not MIN_SIZE <= len(self.tickers) <= MAX_SIZE:
            raise InputError(f"portfolio must hold 2-4 tickers, got {self.tickers}")
        if len(set(self.tickers)) != len(self.tickers):
            raise InputError(f"duplicate tickers in {self.tickers}")
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown strategy {self.strategy!r}")

    @property
    def key(self) -> tuple[str, ...]:
        return tuple(sorted(self.tickers))

    @property
    def label(self) -> str:
        return "+".join(self.tickers)


def split_sizes(n: int) -> list[int]:
    """Group sizes for a cluster of ``n`` members."""
    if n <= 1:
        return []
    if n <= MAX_SIZE:
        return [n]
    q, rem = divmod(n, 3)
    if rem == 0:
        return [3] * q
    if rem == 2:
        return [3] * q + [2]
    return [3] * (q - 1) + [2, 2]


def from_clusters(a: ClusterAssignment) -> list[CandidatePortfolio]:
    out = []
    for c in range(a.K):
        members = np.flatnonzero(a.labels == c)
        # nearest-to-centroid first; index breaks ties
        members = members[np.lexsort((members, a.distances[members]))]
        start = 0
        for size in split_sizes(len(members)):
            group = sorted(members[start : start + size])
            start += size
            out.append(
                CandidatePortfolio(
                    tickers=tuple(a.tickers[i] for i in group),
                    strategy="clustering",
                    score=0.0,
                    source_row=c,
                )
            )
    return out


def row_members(row: np.ndarray, i: int) -> list[int] | None:
    """Columns forming row ``i``'s portfolio, or None when the row yields nothing.

    Nonzero counting includes the diagonal.  With five or more nonzeros the
    anchor ``i`` is kept together with its three largest off-diagonal
    entries by magnitude; if the anchor's own entry has been masked out, the
    four largest entries are taken.
    """
    nz = np.flatnonzero(np.abs(row) > NONZERO_TOL)
    if len(nz) < MIN_SIZE:
        return None
    if len(nz) <= MAX_SIZE:
        return sorted(int(j) for j in nz)
    if abs(row[i]) > NONZERO_TOL:
        off = nz[nz != i]
        top = off[np.lexsort((off, -np.abs(row[off])))][: MAX_SIZE - 1]
        return sorted([i] + [int(j) for j in top])
    top = nz[np.lexsort((nz, -np.abs(row[nz])))][:MAX_SIZE]
    return sorted(int(j) for j in top)


def _row_score(row: np.ndarray) -> float:
    mags = np.abs(row)
    return float(mags[mags > NONZERO_TOL].sum())


def _dedup(cands: Iterable[CandidatePortfolio]) -> list[CandidatePortfolio]:
    kept: dict[tuple, CandidatePortfolio] = {}
    for c in cands:
        prev = kept.get(c.key)
        if prev is None or c.score > prev.score:
            kept[c.key] = c
    return list(kept.values())


def rank(cands: Iterable[CandidatePortfolio]) -> list[CandidatePortfolio]:
    """Descending score, ties broken by the sorted ticker tuple."""
    return sorted(cands, key=lambda c: (-c.score, c.key))


def _rows_to_candidates(theta: np.ndarray, tickers: list[str], strategy: str, rows=None):
    rows = range(len(theta)) if rows is None else rows
    out = []
    for i in rows:
        members = row_members(theta[i], i)
        if members is None:
            continue
        out.append(
            CandidatePortfolio(
                tickers=tuple(tickers[j] for j in members),
                strategy=strategy,
                score=_row_score(theta[i]),
                source_row=int(i),
            )
        )
    return out


def from_precision_rows(t: PrecisionEstimate, strategy: str = "glasso") -> list[CandidatePortfolio]:
    cands = _dedup(_rows_to_candidates(t.theta, t.tickers, strategy))
    return sorted(cands, key=lambda c: c.source_row)


def _check_alignment(a: ClusterAssignment, t: PrecisionEstimate) -> None:
    if list(a.tickers) != list(t.tickers):
        raise InputError("cluster assignment and precision matrix cover different tickers")


def clustering_glasso(a3: ClusterAssignment, t: PrecisionEstimate) -> list[CandidatePortfolio]:
    """Row candidates whose members all share one coarse cluster."""
    _check_alignment(a3, t)
    label = dict(zip(a3.tickers, a3.labels))
    out = []
    for c in from_precision_rows(t, strategy="clustering-glasso"):
        if len({label[x] for x in c.tickers}) == 1:
            out.append(c)
    return out


def glasso_clustering(t: PrecisionEstimate, a3: ClusterAssignment, cutoff: int = 55) -> list[CandidatePortfolio]:
    """One masked pass per coarse cluster, then rank by score and keep ``cutoff``."""
    if cutoff < 1:
        raise InputError("cutoff must be >= 1")
    return rank(glasso_clustering_all(t, a3))[:cutoff]


def glasso_clustering_all(t: PrecisionEstimate, a3: ClusterAssignment) -> list[CandidatePortfolio]:
    """All masked-pass candidates before ranking and cutoff.

    Pass ``c`` zeroes every column of tickers outside cluster ``c`` and reads
    each row, so one row can give a candidate per pass.
    """
    _check_alignment(a3, t)
    cands = []
    for c in range(a3.K):
        inside = a3.labels == c
        if not inside.any():
            continue
        masked = t.theta * inside[None, :]
        cands.extend(_rows_to_candidates(masked, t.tickers, "glasso-clustering"))
    return _dedup(cands)


def to_frame(cands: list[CandidatePortfolio]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "strategy": [c.strategy for c in cands],
            "score": [c.score for c in cands],
            "source_row": [c.source_row for c in cands],
            "n_stocks": [len(c.tickers) for c in cands],
            "tickers": [" ".join(c.tickers) for c in cands],
        }
    )
