"""Command-line entry point.

Exit codes: 0 success, 1 stage failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import pipeline as pl
from .errors import InputError, StatArbError
from .jttw import run_statarb_test
from .portfolios import STRATEGIES
from .synthetic import SyntheticSpec, generate_universe, write_csvs

logger = logging.getLogger("mfstatarb")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run config")
    p.add_argument("--mode", choices=pl.MODES)
    p.add_argument("--strategy", choices=(*STRATEGIES, "all"))
    p.add_argument("--factors", choices=("raw", "pc"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfstatarb", description="Multi-factor statistical-arbitrage pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (
        ("run", "full pipeline"),
        ("select", "candidate portfolios only"),
        ("backtest", "select, filter and trade; no statistical-arbitrage test"),
        ("ingest", "validate and clean the input panel"),
    ):
        _common(sub.add_parser(name, help=help_))

    t = sub.add_parser("test", help="statistical-arbitrage test on an existing pnl file")
    t.add_argument("--pnl", type=Path, required=True)
    t.add_argument("--column", default=None, help="value column (default: discounted if present, else value)")
    t.add_argument("--strategy", default=None, help="restrict to one strategy in a multi-strategy file")
    t.add_argument("--phase", default=None)
    t.add_argument("--B", type=int, default=500)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path)

    r = sub.add_parser("report", help="re-render tables from an output directory")
    r.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset and a matching run config")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-stocks", type=int, default=SyntheticSpec.n_stocks)
    s.add_argument("--n-groups", type=int, default=SyntheticSpec.n_groups)
    s.add_argument("--group-size", type=int, default=SyntheticSpec.group_size)
    s.add_argument("--days", type=int, default=SyntheticSpec.horizon_days)
    s.add_argument("--noise-sd", type=float, default=SyntheticSpec.coint_noise_sd)
    return parser


def _config(args) -> pl.RunConfig:
    cfg = pl.RunConfig.from_file(args.config) if args.config else pl.RunConfig()
    if args.mode:
        cfg.mode = args.mode
    if args.strategy:
        cfg.strategies = list(STRATEGIES) if args.strategy == "all" else [args.strategy]
    if args.factors:
        cfg.factor_mode = args.factors
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = str(args.out)
    return cfg


def _ingest(cfg: pl.RunConfig) -> int:
    cfg.validate()
    universe, _, info = pl.load_universe(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame({"ticker": universe.tickers})
    pl.write_csv(out / "universe.csv", df, cfg.hash(), pl.UNITS["universe"])
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def _test(args) -> int:
    df = pl.read_csv(args.pnl)
    if args.strategy is not None and "strategy" in df.columns:
        df = df[df["strategy"] == args.strategy]
    if args.phase is not None and "phase" in df.columns:
        df = df[df["phase"] == args.phase]
    column = args.column or ("discounted" if "discounted" in df.columns else "value")
    if column not in df.columns:
        raise InputError(f"{args.pnl} has no column {column!r}")
    groups = df.groupby(["phase", "strategy"], sort=False) if {"phase", "strategy"} <= set(df.columns) else [(("", ""), df)]
    rows = []
    for (phase, strategy), block in groups:
        res = run_statarb_test(block[column].to_numpy(dtype=float), B=args.B, seed=args.seed)
        rows.append(
            {
                "phase": phase,
                "strategy": strategy,
                **res.fit.as_dict(),
                **res.sub_statistics,
                "min_t": res.statistic,
                "p_value": res.p_value,
                "decision": res.decision,
                "B": res.mc_replications,
            }
        )
    table = pd.DataFrame(rows)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        pl.write_csv(args.out / "statarb.csv", table, "n/a", pl.UNITS["statarb"])
    print(table.to_string(index=False))
    return 0


def _synth(args) -> int:
    spec = SyntheticSpec(
        n_stocks=args.n_stocks,
        n_groups=args.n_groups,
        group_size=args.group_size,
        coint_noise_sd=args.noise_sd,
        horizon_days=args.days,
        seed=args.seed,
    )
    u = generate_universe(spec)
    paths = write_csvs(u, args.out)
    cfg = {
        "prices_path": paths["prices"].name,
        "factors_path": paths["factors"].name,
        "riskfree_path": paths["riskfree"].name,
        "seed": args.seed,
    }
    (args.out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(u.panel.tickers)} tickers x {len(u.panel.dates)} days to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        if args.command == "report":
            print(pl.render_report(args.out), end="")
            return 0
        if args.command == "test":
            return _test(args)
        if args.command == "synth":
            return _synth(args)
        cfg = _config(args)
        if args.command == "ingest":
            return _ingest(cfg)
        stop = {"run": None, "select": "select", "backtest": "backtest"}[args.command]
        code = pl.run_pipeline(cfg, stop_after=stop)
        if code:
            print((Path(cfg.out_dir) / pl.FAILED_MARKER).read_text(), file=sys.stderr, end="")
        return code
    except StatArbError as exc:
        stage = exc.stage or args.command
        print(f"error [{stage}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
