"""Config-driven batch pipeline: ingest, select, filter, trade, report, test.

Every CSV written here starts with ``#`` comment lines naming the config hash
and the units of its columns; :func:`read_csv` skips them.  Outputs carry
no timestamps, so identical configs give byte-identical trees.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import backtest as bt
from . import portfolios as pf
from .clustering import kmeans
from .errors import DegenerateSeriesError, InputError, MissingArtifactError, StatArbError
from .factors import feature_space
from .glasso import correlation_from_prices, graphical_lasso, tune_rho
from .jttw import MIN_LENGTH, run_statarb_test
from .market_data import CleanUniverse, PeriodSplit, clean, load_panel, load_riskfree, snapshot_and_standardize, transform_factors

logger = logging.getLogger(__name__)

MODES = ("normal", "adaptive", "cross-validation")
PNL_KINDS = ("realized-distributed", "mark-to-market")
FLOAT_FORMAT = "%.10g"
FAILED_MARKER = "FAILED"
MANIFEST = "run_manifest.json"

UNITS = {
    "candidates": "score: sum of |precision entries| in the source row (dimensionless; 0 for clustering)",
    "trades": "profit: USD per $2 gross position; entry_z: spread standard deviations",
    "pnl": "value: daily incremental profit in USD; discounted: value times the risk-free discount factor",
    "report": "profits in USD per $2 gross position; counts are integers; ratio is a share in [0, 1]",
    "statarb": "mu, sigma: USD per day; theta, lambda_vol, phi: dimensionless; t_*: standardized margins",
    "histogram": "bin_center, lower, upper: USD profit per trade; count: trades",
    "scree": "eigenvalue: variance of z-scored factors; explained_ratio: share of total",
    "precision": "dimensionless inverse-correlation entries",
    "universe": "counts of tickers and dates",
}


@dataclass
class RunConfig:
    """Pipeline settings."""

    prices_path: str = ""
    factors_path: str = ""
    riskfree_path: str | None = None
    schema: dict[str, str] | None = None
    formation: list[str] | None = None  # [start, end) ISO dates
    trading: list[str] | None = None
    cv_formation: list[str] | None = None
    cv_trading: list[str] | None = None
    mode: str = "normal"
    factor_mode: str = "raw"
    k: int = 7
    strategies: list[str] = field(default_factory=lambda: list(pf.STRATEGIES))
    K: int = 30
    K_coarse: int = 3
    kmeans_restarts: int = 10
    rho: float | None = None  # None: tune for the target density
    rho_target: list[float] = field(default_factory=lambda: [2.0, 5.0])
    glasso_use_returns: bool = False
    glasso_tol: float = 1e-5
    cutoff: int = 55
    open_k: float = 2.0
    bailout_loss: float = 0.6
    force_close_at_end: bool = True
    lag_order: int = 1
    det_spec: str = "restricted-constant"
    B: int = 500
    pnl_kinds: list[str] = field(default_factory=lambda: ["realized-distributed"])
    combine: str = "mean"
    alpha: float = 0.05
    dump_precision: bool = False
    workers: int = 1
    seed: int | None = None
    out_dir: str = "out"

    def validate(self) -> None:
        if self.seed is None:
            raise InputError("config needs an explicit seed")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        if self.factor_mode not in ("raw", "pc"):
            raise InputError("factor_mode must be 'raw' or 'pc'")
        unknown = [s for s in self.strategies if s not in pf.STRATEGIES]
        if unknown or not self.strategies:
            raise InputError(f"unknown strategies {unknown}")
        bad = [k for k in self.pnl_kinds if k not in PNL_KINDS]
        if bad:
            raise InputError(f"unknown pnl kinds {bad}")
        for name in ("prices_path", "factors_path"):
            if not getattr(self, name):
                raise InputError(f"{name} is required")
        if self.workers < 1:
            raise InputError("workers must be >= 1")

    def sim_config(self) -> bt.SimConfig:
        return bt.SimConfig(self.open_k, self.bailout_loss, self.force_close_at_end)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def hash(self) -> str:
        # out_dir does not change any numbers
        d = asdict(self)
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: str | Path | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown config keys {sorted(extra)}")
        cfg = cls(**d)
        if base_dir is not None:
            for name in ("prices_path", "factors_path", "riskfree_path"):
                value = getattr(cfg, name)
                if value and not Path(value).is_absolute():
                    setattr(cfg, name, str(Path(base_dir) / value))
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise InputError(f"config {path} does not exist")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d, base_dir=path.parent)


class _Stage:
    """Tags any toolkit error raised inside the block with a stage name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, StatArbError) and exc.stage is None:
            exc.stage = self.name
        return False


# ---------------------------------------------------------------- writing


def write_csv(path: Path, df: pd.DataFrame, config_hash: str, units: str) -> None:
    header = f"# config_hash: {config_hash}\n# units: {units}\n"
    with open(path, "w", newline="") as fh:
        fh.write(header)
        df.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_csv(path: Path) -> pd.DataFrame:
    """Read a pipeline CSV, skipping its leading ``#`` header lines only."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run the pipeline first")
    with open(path) as fh:
        skip = 0
        for line in fh:
            if not line.startswith("#"):
                break
            skip += 1
    return pd.read_csv(path, skiprows=skip)


def _window(dates: np.ndarray, lo: int, hi: int) -> tuple[np.datetime64, np.datetime64]:
    end = dates[hi] if hi < len(dates) else dates[-1] + np.timedelta64(1, "D")
    return dates[lo], end


def default_splits(dates: np.ndarray) -> tuple[PeriodSplit, PeriodSplit]:
    """Main study on the first half of the data, cross-validation on the second.

    Each half is split evenly into formation and trading windows.
    """
    n = len(dates)
    if n < 8:
        raise InputError("too few dates to derive default periods")
    h = n // 2
    q1, q3 = h // 2, h + (n - h) // 2
    main = PeriodSplit(_window(dates, 0, q1), _window(dates, q1, h))
    cv = PeriodSplit(_window(dates, h, q3), _window(dates, q3, n))
    return main, cv


def resolve_split(cfg: RunConfig, dates: np.ndarray) -> PeriodSplit:
    main, cv = default_splits(dates)
    if cfg.mode == "cross-validation":
        if cfg.cv_formation and cfg.cv_trading:
            return PeriodSplit.from_strings(cfg.cv_formation, cfg.cv_trading)
        return cv
    if cfg.formation and cfg.trading:
        return PeriodSplit.from_strings(cfg.formation, cfg.trading)
    return main


# ------------------------------------------------------------- selection


@dataclass
class Selection:
    candidates: dict[str, list[pf.CandidatePortfolio]]
    diagnostics: dict[str, Any]
    scree: pd.DataFrame
    precision: pd.DataFrame | None = None


def select_candidates(universe: CleanUniverse, window: tuple, cfg: RunConfig) -> Selection:
    """Candidate portfolios per requested strategy from one formation window."""
    wanted = set(cfg.strategies)
    with _Stage("normalize"):
        X = snapshot_and_standardize(universe, window)
    with _Stage("factor-select"):
        F, pres = feature_space(X, cfg.factor_mode, cfg.k)
    diag: dict[str, Any] = {
        "window": [str(window[0]), str(window[1])],
        "features": [str(p) for p in F.provenance],
        "explained_ratio_top_k": float(pres.explained_ratio[: cfg.k].sum()),
    }
    scree = pd.DataFrame(
        {
            "component": np.arange(len(pres.eigenvalues)),
            "eigenvalue": pres.eigenvalues,
            "explained_ratio": pres.explained_ratio,
            "cumulative": np.cumsum(pres.explained_ratio),
        }
    )
    out: dict[str, list[pf.CandidatePortfolio]] = {}
    a30 = a3 = theta = None
    with _Stage("cluster"):
        if "clustering" in wanted:
            a30 = kmeans(F, cfg.K, restarts=cfg.kmeans_restarts, seed=cfg.seed)
            diag["cluster_sizes_K"] = a30.sizes()
        if wanted & {"clustering-glasso", "glasso-clustering"}:
            a3 = kmeans(F, cfg.K_coarse, restarts=cfg.kmeans_restarts, seed=cfg.seed)
            diag["cluster_sizes_K_coarse"] = a3.sizes()
    with _Stage("glasso"):
        if wanted - {"clustering"}:
            sl = universe.window_index(window)
            S = correlation_from_prices(universe.prices[sl], universe.tickers, use_returns=cfg.glasso_use_returns)
            if cfg.rho is None:
                theta = tune_rho(S, target=tuple(cfg.rho_target), tol=cfg.glasso_tol)
            else:
                theta = graphical_lasso(S, cfg.rho, tol=cfg.glasso_tol)
            diag["rho"] = theta.rho
            diag["glasso_converged"] = theta.converged
            diag["offdiag_nonzeros_per_row"] = theta.offdiag_nonzeros_per_row()
    with _Stage("candidates"):
        for name in pf.STRATEGIES:
            if name not in wanted:
                continue
            if name == "clustering":
                out[name] = pf.from_clusters(a30)
            elif name == "glasso":
                out[name] = pf.from_precision_rows(theta)
            elif name == "clustering-glasso":
                out[name] = pf.clustering_glasso(a3, theta)
            else:
                out[name] = pf.glasso_clustering(theta, a3, cutoff=cfg.cutoff)
        diag["n_candidates"] = {k: len(v) for k, v in out.items()}
    precision = None
    if theta is not None and cfg.dump_precision:
        precision = pd.DataFrame(theta.theta, columns=theta.tickers)
        precision.insert(0, "ticker", theta.tickers)
    return Selection(out, diag, scree, precision)


# --------------------------------------------------------------- running


@dataclass
class PhaseResult:
    phase: str
    split: PeriodSplit
    results: dict[str, bt.StrategyResult]


def load_universe(cfg: RunConfig) -> tuple[CleanUniverse, pd.Series | None, dict[str, Any]]:
    with _Stage("ingest"):
        raw = load_panel(cfg.prices_path, cfg.factors_path, cfg.schema)
        universe = transform_factors(clean(raw))
        rf = load_riskfree(cfg.riskfree_path) if cfg.riskfree_path else None
    info = {
        "tickers_loaded": len(raw.tickers),
        "tickers_kept": len(universe.tickers),
        "tickers_dropped": sorted(set(raw.tickers) - set(universe.tickers)),
        "dates": len(universe.dates),
        "first_date": str(universe.dates[0]),
        "last_date": str(universe.dates[-1]),
    }
    return universe, rf, info


def _phases(universe, cfg: RunConfig, split: PeriodSplit, manifest: dict) -> list[PhaseResult]:
    sim = cfg.sim_config()
    if cfg.mode == "adaptive":
        selections: list[Selection] = []

        def select(window):
            s = select_candidates(universe, window, cfg)
            selections.append(s)
            return s.candidates

        with _Stage("backtest"):
            ar = bt.adaptive_run(universe, select, split, sim, lag_order=cfg.lag_order, det_spec=cfg.det_spec)
        manifest["selection"] = {"half1": selections[0].diagnostics, "half2": selections[1].diagnostics}
        manifest["adaptive_midpoint"] = str(ar.midpoint)
        manifest["_selections"] = selections
        return [PhaseResult("half1", ar.splits[0], ar.first), PhaseResult("half2", ar.splits[1], ar.second)]
    sel = select_candidates(universe, split.formation, cfg)
    manifest["selection"] = {cfg.mode: sel.diagnostics}
    manifest["_selections"] = [sel]
    results = {}
    with _Stage("backtest"):
        for name, cands in sel.candidates.items():
            results[name] = bt.run_strategy(name, cands, universe, split, sim, cfg.lag_order, cfg.det_spec)
    return [PhaseResult(cfg.mode, split, results)]


def _pnl(result: bt.StrategyResult, kind: str, rf, combine: str) -> bt.PnLSeries:
    if kind == "mark-to-market":
        return bt.mark_to_market_pnl(result, rf, combine)
    return bt.realized_distributed_pnl(result.trades, result.trading_dates, rf, combine)


def _statarb_row(phase, name, kind, series: bt.PnLSeries, cfg: RunConfig) -> dict[str, Any]:
    v = series.discounted if series.discounted is not None else series.values
    row: dict[str, Any] = {"phase": phase, "strategy": name, "pnl_kind": kind, "n_days": len(v)}
    try:
        if len(v) < MIN_LENGTH:
            raise DegenerateSeriesError(f"series has {len(v)} days, need {MIN_LENGTH}")
        res = run_statarb_test(v, B=cfg.B, seed=cfg.seed, alpha=cfg.alpha)
    except DegenerateSeriesError as exc:
        row.update(decision="not-tested", note=str(exc))
        return row
    fit = res.fit
    row.update(
        mu=fit.mu,
        theta=fit.theta,
        lambda_vol=fit.lambda_vol,
        sigma=fit.sigma,
        phi=fit.phi,
        loglik=fit.loglik,
        fit_converged=fit.converged,
        t_mu=res.sub_statistics["t_mu"],
        t_lambda=res.sub_statistics["t_lambda"],
        t_theta=res.sub_statistics["t_theta"],
        min_t=res.statistic,
        p_value=res.p_value,
        decision=res.decision,
        B=res.mc_replications,
        note=res.notes["p_value"],
    )
    return row


STATARB_COLUMNS = [
    "phase", "strategy", "pnl_kind", "n_days", "mu", "theta", "lambda_vol", "sigma", "phi", "loglik",
    "fit_converged", "t_mu", "t_lambda", "t_theta", "min_t", "p_value", "decision", "B", "note",
]


def run_pipeline(cfg: RunConfig, out_dir: str | Path | None = None, stop_after: str | None = None) -> int:
    """Run the configured pipeline and write its artifacts.

    ``stop_after`` may be ``"select"`` (candidates only) or ``"backtest"``
    (no statistical-arbitrage test).  Returns 0 on success, 1 when a stage
    fails; the failing stage is written to a ``FAILED`` marker next to the
    partial outputs.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILED_MARKER
    if marker.exists():
        marker.unlink()
    h = cfg.hash()
    echo = asdict(cfg)
    echo.pop("out_dir")
    manifest: dict[str, Any] = {"config": echo, "config_hash": h, "status": "running"}
    try:
        cfg.validate()
        _run(cfg, out, h, manifest, stop_after)
    except StatArbError as exc:
        stage = exc.stage or "config"
        marker.write_text(f"stage: {stage}\nerror: {type(exc).__name__}: {exc}\n")
        manifest["status"] = f"failed at {stage}"
        _write_manifest(out, manifest)
        logger.error("stage %s failed: %s", stage, exc)
        return 1
    manifest["status"] = "ok"
    _write_manifest(out, manifest)
    return 0


def _write_manifest(out: Path, manifest: dict) -> None:
    public = {k: v for k, v in manifest.items() if not k.startswith("_")}
    (out / MANIFEST).write_text(json.dumps(public, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _run(cfg: RunConfig, out: Path, h: str, manifest: dict, stop_after: str | None) -> None:
    universe, rf, info = load_universe(cfg)
    manifest["universe"] = info
    split = resolve_split(cfg, universe.dates)
    manifest["split"] = {
        "formation": [str(d) for d in split.formation],
        "trading": [str(d) for d in split.trading],
    }

    if stop_after == "select":
        sel = select_candidates(universe, split.formation, cfg)
        manifest["selection"] = {cfg.mode: sel.diagnostics}
        _write_candidates(out, h, [(cfg.mode, sel)])
        write_csv(out / "scree.csv", sel.scree, h, UNITS["scree"])
        if sel.precision is not None:
            write_csv(out / "precision.csv", sel.precision, h, UNITS["precision"])
        return

    phases = _phases(universe, cfg, split, manifest)
    selections = manifest.pop("_selections")
    _write_candidates(out, h, list(zip([p.phase for p in phases], selections)))
    write_csv(out / "scree.csv", selections[0].scree, h, UNITS["scree"])
    if selections[0].precision is not None:
        write_csv(out / "precision.csv", selections[0].precision, h, UNITS["precision"])

    with _Stage("report"):
        trades, reports, hists = [], [], []
        pnl_frames: dict[str, list[pd.DataFrame]] = {k: [] for k in cfg.pnl_kinds}
        for ph in phases:
            for name, res in ph.results.items():
                tf = bt.trades_frame(res.trades)
                tf.insert(0, "strategy", name)
                tf.insert(0, "phase", ph.phase)
                trades.append(tf)
                rep = bt.metrics(res).to_frame()
                rep.insert(0, "phase", ph.phase)
                reports.append(rep)
                hist = bt.profit_histogram([t.profit for t in res.trades])
                hist.insert(0, "strategy", name)
                hist.insert(0, "phase", ph.phase)
                hists.append(hist)
                for kind in cfg.pnl_kinds:
                    f = _pnl(res, kind, rf, cfg.combine).to_frame()
                    f.insert(0, "strategy", name)
                    f.insert(0, "phase", ph.phase)
                    pnl_frames[kind].append(f)
        write_csv(out / "trades.csv", _concat(trades, bt.trades_frame([]).columns), h, UNITS["trades"])
        write_csv(out / "report.csv", pd.concat(reports, ignore_index=True), h, UNITS["report"])
        write_csv(out / "histogram.csv", _concat(hists, ["phase", "strategy", "bin_center", "lower", "upper", "count"]), h, UNITS["histogram"])
        for kind, frames in pnl_frames.items():
            write_csv(out / f"pnl_{kind}.csv", _concat(frames, ["phase", "strategy", "date", "value"]), h, UNITS["pnl"])
        manifest["traded_portfolios"] = {
            f"{ph.phase}/{name}": len(res.traded) for ph in phases for name, res in ph.results.items()
        }
    if stop_after == "backtest":
        return

    with _Stage("statarb-test"):
        rows = []
        for ph in phases:
            for name, res in ph.results.items():
                for kind in cfg.pnl_kinds:
                    rows.append(_statarb_row(ph.phase, name, kind, _pnl(res, kind, rf, cfg.combine), cfg))
        df = pd.DataFrame(rows).reindex(columns=STATARB_COLUMNS)
        write_csv(out / "statarb.csv", df, h, UNITS["statarb"])


def _concat(frames: list[pd.DataFrame], columns) -> pd.DataFrame:
    frames = [f for f in frames if len(f)]
    if not frames:
        return pd.DataFrame(columns=list(columns))
    return pd.concat(frames, ignore_index=True)


def _write_candidates(out: Path, h: str, selections: list[tuple[str, Selection]]) -> None:
    frames = []
    for phase, sel in selections:
        for name, cands in sel.candidates.items():
            f = pf.to_frame(cands)
            f.insert(0, "rank", np.arange(1, len(f) + 1))
            f.insert(0, "phase", phase)
            frames.append(f)
    cols = ["phase", "rank", "strategy", "score", "source_row", "n_stocks", "tickers"]
    write_csv(out / "candidates.csv", _concat(frames, cols), h, UNITS["candidates"])


# ---------------------------------------------------------------- render


def render_report(out_dir: str | Path) -> str:
    """Summary tables from existing artifacts; never recomputes numbers."""
    out = Path(out_dir)
    report = read_csv(out / "report.csv")
    blocks = []
    for phase, block in report.groupby("phase", sort=False):
        table = block.pivot_table(index="metric", columns="strategy", values="value", aggfunc="first", sort=False)
        table = table.reindex(list(bt.REPORT_ROWS))
        blocks.append(f"== {phase} ==\n{table.to_string(float_format=lambda x: f'{x:.4g}')}")
    stat_path = out / "statarb.csv"
    if stat_path.exists():
        st = read_csv(stat_path)
        cols = [c for c in ("phase", "strategy", "pnl_kind", "min_t", "p_value", "decision") if c in st.columns]
        blocks.append("== statistical arbitrage test ==\n" + st[cols].to_string(index=False))
    return "\n\n".join(blocks) + "\n"
