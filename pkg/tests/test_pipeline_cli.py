import json

import pytest

from mfstatarb import pipeline as pl
from mfstatarb.cli import main
from mfstatarb.errors import InputError, MissingArtifactError


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(d), "--seed", "1", "--days", "600"]) == 0
    cfg = json.loads((d / "config.json").read_text())
    cfg["B"] = 200
    (d / "config.json").write_text(json.dumps(cfg))
    return d


def test_synth_writes_config(dataset):
    cfg = pl.RunConfig.from_file(dataset / "config.json")
    assert cfg.seed == 1 and cfg.prices_path.startswith(str(dataset))


def test_run_normal_mode(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(dataset / "config.json"), "--out", str(out)]) == 0
    for name in ("candidates.csv", "trades.csv", "report.csv", "statarb.csv", "pnl_realized-distributed.csv", pl.MANIFEST):
        assert (out / name).exists(), name
    head = (out / "report.csv").read_text().splitlines()[0]
    assert head.startswith("#")
    report = pl.read_csv(out / "report.csv")
    assert set(report["strategy"]) == set(pl.pf.STRATEGIES)
    assert (report["metric"] == "Average # of stocks per portfolio").sum() == 4
    stat = pl.read_csv(out / "statarb.csv")
    assert set(pl.STATARB_COLUMNS) <= set(stat.columns)
    assert json.loads((out / pl.MANIFEST).read_text())["status"] == "ok"
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    assert "Total net profit" in capsys.readouterr().out


def test_adaptive_mode_has_two_phases(dataset, tmp_path):
    out = tmp_path / "adaptive"
    code = main(["backtest", "--config", str(dataset / "config.json"), "--mode", "adaptive", "--out", str(out)])
    assert code == 0
    assert set(pl.read_csv(out / "report.csv")["phase"]) == {"half1", "half2"}
    assert not (out / "statarb.csv").exists()


def test_select_only(dataset, tmp_path):
    out = tmp_path / "sel"
    code = main(["select", "--config", str(dataset / "config.json"), "--strategy", "glasso", "--factors", "pc", "--out", str(out)])
    assert code == 0
    cands = pl.read_csv(out / "candidates.csv")
    assert set(cands["strategy"]) == {"glasso"}
    assert not (out / "trades.csv").exists()


def test_test_subcommand_on_pnl_file(dataset, tmp_path, capsys):
    out = tmp_path / "bt"
    assert main(["backtest", "--config", str(dataset / "config.json"), "--strategy", "glasso", "--out", str(out)]) == 0
    code = main(["test", "--pnl", str(out / "pnl_realized-distributed.csv"), "--B", "200", "--out", str(out / "t")])
    assert code == 0
    assert "p_value" in capsys.readouterr().out


def test_exit_codes(dataset, tmp_path, capsys):
    assert main(["frobnicate"]) == 2
    assert main(["run", "--mode", "sideways"]) == 2
    assert main(["report", "--out", str(tmp_path / "nothing")]) == 1
    cfg = json.loads((dataset / "config.json").read_text())
    del cfg["seed"]
    bad = tmp_path / "noseed.json"
    bad.write_text(json.dumps({**cfg, "prices_path": str(dataset / "prices.csv"), "factors_path": str(dataset / "factors.csv")}))
    out = tmp_path / "fail"
    assert main(["run", "--config", str(bad), "--out", str(out)]) == 1
    assert (out / pl.FAILED_MARKER).exists()
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"prices_path": "nope.csv", "factors_path": "nope.csv", "seed": 0}))
    assert main(["run", "--config", str(missing), "--out", str(tmp_path / "m")]) == 1
    assert "ingest" in (tmp_path / "m" / pl.FAILED_MARKER).read_text()


def test_config_rules(tmp_path):
    with pytest.raises(InputError):
        pl.RunConfig.from_dict({"bogus": 1})
    a = pl.RunConfig(prices_path="p", factors_path="f", seed=0, out_dir="x")
    b = pl.RunConfig(prices_path="p", factors_path="f", seed=0, out_dir="y")
    assert a.hash() == b.hash()
    with pytest.raises(MissingArtifactError):
        pl.read_csv(tmp_path / "absent.csv")
