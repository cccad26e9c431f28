"""Acceptance criteria 1-9, one pass/fail line each."""
import filecmp
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binomtest

from mfstatarb import glasso as gl
from mfstatarb import jttw
from mfstatarb import pipeline as pl
from mfstatarb import synthetic as syn
from mfstatarb.clustering import kmeans
from mfstatarb.cointegration import johansen_test
from mfstatarb.market_data import clean, transform_factors

from conftest import record
from oracles import (
    SCRIPTED_PATHS,
    angle_deg,
    ari,
    ledger_matches,
    mean_chain_f1,
    planted_pair,
    random_spd,
    random_walk_pair,
    run_scripted,
    three_blobs,
)
from portfolio_rules import ALL_CHECKS

HYBRIDS = ("clustering-glasso", "glasso-clustering")


def test_criterion_1_rule_fidelity():
    t0 = time.perf_counter()
    failures = []
    for check in ALL_CHECKS:
        try:
            check()
        except AssertionError as exc:
            failures.append(f"{check.__name__}: {exc}")
    dt = time.perf_counter() - t0
    ok = not failures and dt < 1.0
    record(1, ok, f"{len(ALL_CHECKS) - len(failures)}/{len(ALL_CHECKS)} rules, {dt:.3f}s (limit 1s) {failures}")
    assert ok


def test_criterion_2_glasso():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    inv_err, diag_ok = 0.0, True
    for _ in range(5):
        A = random_spd(10, rng)
        S = A / np.sqrt(np.outer(np.diag(A), np.diag(A)))
        est = gl.graphical_lasso(S, 0.0, tol=1e-10, max_iter=2000)
        inv_err = max(inv_err, float(np.max(np.abs(est.theta - np.linalg.inv(S)))))
        big = gl.graphical_lasso(S, gl.max_offdiag(S) + 1e-3)
        diag_ok &= not np.any(big.theta - np.diag(np.diag(big.theta)))
    f1 = mean_chain_f1(reps=10, n=20, T=1000, rho=0.1)
    monotone = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in range(5):
            A = random_spd(20, np.random.default_rng(seed), cond=50)
            S = A / np.sqrt(np.outer(np.diag(A), np.diag(A)))
            for rho in (0.02, 0.1, 0.3):
                h = np.array(gl.graphical_lasso(S, rho, tol=1e-8).objective_history)
                monotone &= bool(np.all(np.diff(h) >= -1e-10))
    dt = time.perf_counter() - t0
    ok = inv_err < 1e-6 and diag_ok and f1 >= 0.8 and monotone and dt < 30
    record(2, ok, f"inverse err {inv_err:.1e}, diagonal {diag_ok}, chain F1 {f1:.3f} (mean of 10), monotone {monotone}, {dt:.1f}s")
    assert ok


def test_criterion_3_johansen():
    t0 = time.perf_counter()
    rejections = np.mean([johansen_test(random_walk_pair(s)).rank > 0 for s in range(1000)])
    truth = np.array([1.0, -0.5])  # y2 - 2*y1, first component normalized
    hits = 0
    for s in range(1000):
        r = johansen_test(planted_pair(10_000 + s))
        hits += r.rank >= 1 and angle_deg(r.beta, truth) <= 5.0
    detect = hits / 1000
    dt = time.perf_counter() - t0
    ok = abs(rejections - 0.05) <= 0.02 and detect >= 0.95 and dt < 120
    record(3, ok, f"null rejection {rejections:.3f} (0.05 +- 0.02), planted detection within 5deg {detect:.3f}, {dt:.1f}s")
    assert ok


def test_criterion_4_kmeans():
    t0 = time.perf_counter()
    X, truth = three_blobs()
    a = kmeans(X, 3, seed=0)
    score = ari(a.labels, truth)
    Y = np.random.default_rng(1).standard_normal((200, 5))
    b = kmeans(Y, 8, restarts=10, seed=5)
    monotone = bool(np.all(np.diff(b.inertia_history) <= 1e-12))
    c = kmeans(Y, 8, restarts=10, seed=5)
    same = b.labels.tobytes() == c.labels.tobytes() and b.centroids.tobytes() == c.centroids.tobytes()
    dt = time.perf_counter() - t0
    ok = score == 1.0 and monotone and same and dt < 5
    record(4, ok, f"ARI {score}, inertia monotone {monotone}, bitwise repeat {same}, {dt:.2f}s")
    assert ok


def test_criterion_5_backtest():
    results = {name: ledger_matches(*run_scripted(name)) for name in SCRIPTED_PATHS}
    ok = all(results.values())
    record(5, ok, f"ledgers matching to 1e-9 with gross 2: {results}")
    assert ok


def test_criterion_6_jttw_calibration():
    t0 = time.perf_counter()
    n, sigma = 500, 0.1
    children = np.random.SeedSequence(12345).spawn(300)
    null = [
        jttw.statarb_rejects(jttw.simulate_jttw(n, 0.0, 0.0, 0.0, sigma, 0.0, np.random.default_rng(c)), B=500, seed=i)
        for i, c in enumerate(children[:200])
    ]
    power = [
        jttw.statarb_rejects(jttw.simulate_jttw(n, 0.1, 0.0, -0.3, sigma, 0.0, np.random.default_rng(c)), B=500, seed=i)
        for i, c in enumerate(children[200:])
    ]
    size, pw = float(np.mean(null)), float(np.mean(power))
    dt = time.perf_counter() - t0
    ok = 0.02 <= size <= 0.10 and pw >= 0.8 and dt < 300
    record(6, ok, f"null rejection {size:.3f} over 200, power {pw:.2f} over 100, B=500, {dt:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("accept")
    u = syn.generate_universe(syn.SyntheticSpec(seed=0))
    paths = syn.write_csvs(u, base / "data")
    cfg = pl.RunConfig(
        prices_path=str(paths["prices"]),
        factors_path=str(paths["factors"]),
        riskfree_path=str(paths["riskfree"]),
        seed=0,
    )
    t0 = time.perf_counter()
    code = pl.run_pipeline(cfg, base / "run1")
    return u, cfg, base, code, time.perf_counter() - t0


def test_criterion_7_end_to_end(synthetic_run):
    u, _, base, code, dt = synthetic_run
    out = base / "run1"
    cands = pl.read_csv(out / "candidates.csv")
    report = pl.read_csv(out / "report.csv")
    stat = pl.read_csv(out / "statarb.csv")
    stat = stat[stat["pnl_kind"] == "realized-distributed"]
    parts, ok = [], code == 0 and dt < 180
    for name in HYBRIDS:
        tickers = [t.split() for t in cands.loc[cands["strategy"] == name, "tickers"]]
        recovered = syn.groups_recovered(tickers, u.groups)
        profit = float(report[(report["strategy"] == name) & (report["metric"] == "Total net profit")]["value"].iloc[0])
        p = float(stat.loc[stat["strategy"] == name, "p_value"].iloc[0])
        ok &= recovered >= 0.7 and profit > 0 and p < 0.05
        parts.append(f"{name}: recovered {recovered:.0%}, profit {profit:.3f}, p {p:.3f}")
    record(7, ok, f"{'; '.join(parts)}; {dt:.0f}s")
    assert ok


def test_criterion_8_directional():
    wins = {h: 0 for h in HYBRIDS}
    losses = {h: 0 for h in HYBRIDS}
    for seed in range(20):
        u = syn.generate_universe(syn.SyntheticSpec(seed=seed))
        universe = transform_factors(clean(u.panel))
        cfg = pl.RunConfig(prices_path="-", factors_path="-", seed=seed)
        window = pl.default_splits(universe.dates)[0].formation
        sel = pl.select_candidates(universe, window, cfg).candidates
        base = syn.candidate_precision(sel["glasso"], u.labels)
        for h in HYBRIDS:
            p = syn.candidate_precision(sel[h], u.labels)
            wins[h] += p > base
            losses[h] += p < base
    parts, ok = [], True
    for h in HYBRIDS:
        n = wins[h] + losses[h]
        pv = binomtest(wins[h], n, 0.5, alternative="greater").pvalue if n else 1.0
        ok &= pv < 0.05
        parts.append(f"{h} > glasso in {wins[h]}, < in {losses[h]}, ties {20 - n}, sign-test p {pv:.4f}")
    record(8, ok, "; ".join(parts))
    assert ok


def _tree_identical(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_tree_identical(a / d, b / d) for d in cmp.common_dirs)


def test_criterion_9_determinism(synthetic_run):
    _, cfg, base, code, _ = synthetic_run
    code2 = pl.run_pipeline(cfg, base / "run2")
    same = _tree_identical(base / "run1", base / "run2")
    n_files = len(list((base / "run1").iterdir()))
    ok = code == 0 and code2 == 0 and same
    record(9, ok, f"{n_files} files, byte-identical {same}")
    assert ok
