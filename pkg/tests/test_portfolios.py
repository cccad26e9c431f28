import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfstatarb import portfolios as pf
from mfstatarb.errors import InputError

from portfolio_rules import ALL_CHECKS, assignment, precision


@pytest.mark.parametrize("check", ALL_CHECKS, ids=lambda f: f.__name__.removeprefix("check_"))
def test_rule(check):
    check()


def test_candidate_validation():
    with pytest.raises(InputError):
        pf.CandidatePortfolio(("a",), "glasso", 0.0)
    with pytest.raises(InputError):
        pf.CandidatePortfolio(("a", "b", "c", "d", "e"), "glasso", 0.0)


def test_misaligned_inputs():
    a = assignment([0, 0, 1], tickers=["a", "b", "c"])
    t = precision(np.eye(3), tickers=["a", "c", "b"])
    with pytest.raises(InputError):
        pf.clustering_glasso(a, t)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 12))
def test_generated_candidates_are_well_formed(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.4)
    theta = A @ A.T + np.eye(n)
    labels = rng.integers(0, 3, n)
    labels[:3] = [0, 1, 2]
    a, t = assignment(labels), precision(theta)
    for cands in (pf.from_clusters(a), pf.from_precision_rows(t), pf.clustering_glasso(a, t), pf.glasso_clustering_all(t, a)):
        keys = [c.key for c in cands]
        assert len(keys) == len(set(keys))
        assert all(2 <= len(c.tickers) <= 4 for c in cands)
        assert all(len(set(c.tickers)) == len(c.tickers) for c in cands)
    ranked = pf.rank(pf.from_precision_rows(t))
    assert all(x.score >= y.score for x, y in zip(ranked, ranked[1:]))
