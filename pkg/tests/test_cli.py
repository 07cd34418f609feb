import json

import numpy as np
import pytest

from forex_a3c.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, main
from forex_a3c.market_data import random_walk_series, write_candles
from forex_a3c.neural import deserialize_parameters, init_parameters

TINY_TRAIN = """[train]
total_steps = {steps}
workers = 2
episode_len = 40
n_steps = 10
window = 4
hidden = 8
fc1 = 8
fc2 = 8
fc3 = 8
"""


@pytest.fixture
def workspace(tmp_path):
    names = ["EURUSD", "GBPUSD", "USDJPY"]
    for k, name in enumerate(names):
        write_candles(random_walk_series(400, seed=k, pair_name=name), tmp_path / f"{name.lower()}.csv")
    pairs = "\n".join(f"{n} = {n.lower()}.csv" for n in names)

    def config(mode="a3c-lock", scenario="mc", steps=200, extra=""):
        p = tmp_path / f"{mode}-{scenario}-{steps}.ini"
        p.write_text(f"[run]\nmode = {mode}\nscenario = {scenario}\nbackend = thread\n{extra}\n"
                     f"[data]\nsplit_boundary = 2017-01-12T00:00:00Z\n[pairs]\n{pairs}\n"
                     + TINY_TRAIN.format(steps=steps))
        return str(p)

    return tmp_path, config


def test_inspect(workspace, capsys):
    tmp, _ = workspace
    assert main(["inspect", str(tmp / "eurusd.csv")]) == 0
    out = capsys.readouterr().out
    assert "rows: 400, range: 2017-01-02T00:00:00Z..2017-01-18T15:00:00Z, violations: 0" in out
    bad = tmp / "bad.csv"
    lines = (tmp / "eurusd.csv").read_text().splitlines()
    t, o, h, l, c = lines[5].split(",")
    lines[5] = ",".join([t, o, h, str(float(h) * 1.01), c])
    bad.write_text("\n".join(lines) + "\n")
    assert main(["inspect", str(bad)]) == EXIT_DATA
    out = capsys.readouterr().out
    assert "violations: 1" in out and "row 6" in out
    empty = tmp / "empty.csv"
    empty.write_text("")
    assert main(["inspect", str(empty)]) == EXIT_DATA


def test_train_nolock_mc_writes_tree(workspace, capsys):
    tmp, config = workspace
    out = tmp / "run1"
    code = main(["train", "--config", config(), "--mode", "a3c-nolock", "--scenario", "mc",
                 "--steps", "100", "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest").read_text())
    assert manifest["mode"] == "a3c-nolock" and manifest["scenario"] == "mc"
    assert manifest["seeds"] == {"seed": 0, "workers": [0, 1]}
    assert len(manifest["config_hash"]) == 64 and manifest["version"]
    assert (out / "checkpoint").exists() and (out / "log.jsonl").exists()
    assert all(json.loads(line) for line in (out / "log.jsonl").read_text().splitlines())
    assert "steps in" in capsys.readouterr().out


def test_ppo_twice_identical_and_zero_steps(workspace):
    tmp, config = workspace
    cfg = config("ppo", "sc", 80, "pair = EURUSD")
    assert main(["train", "--config", cfg, "--out", str(tmp / "a")]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp / "b")]) == 0
    assert (tmp / "a" / "checkpoint").read_bytes() == (tmp / "b" / "checkpoint").read_bytes()
    assert main(["train", "--config", cfg, "--steps", "0", "--out", str(tmp / "z")]) == 0
    ck = deserialize_parameters(tmp / "z" / "checkpoint")
    assert ck.equal(init_parameters(np.random.default_rng(0), ck.arch))


def test_run_directory_reproduces(workspace):
    tmp, config = workspace
    assert main(["train", "--config", config("a3c-lock", "mc", 120), "--workers", "1",
                 "--out", str(tmp / "orig")]) == 0
    assert main(["train", "--config", str(tmp / "orig" / "config.ini"), "--out", str(tmp / "again")]) == 0
    assert (tmp / "orig" / "checkpoint").read_bytes() == (tmp / "again" / "checkpoint").read_bytes()
    a = json.loads((tmp / "orig" / "manifest").read_text())
    b = json.loads((tmp / "again" / "manifest").read_text())
    assert a["config_hash"] == b["config_hash"]


def test_backtest_reports_and_aggregate(workspace, capsys):
    tmp, config = workspace
    run = tmp / "bt"
    assert main(["train", "--config", config(steps=40), "--out", str(run)]) == 0
    capsys.readouterr()
    assert main(["backtest", "--run", str(run)]) == 0
    table = capsys.readouterr().out
    reports = sorted(p.name for p in (run / "reports").glob("*.json"))
    assert reports == ["EURUSD.json", "GBPUSD.json", "USDJPY.json", "aggregate.json"]
    assert "Sharpe Ratio" in table and "mean" in table
    assert main(["report", str(run / "reports")]) == 0
    assert "mean" in capsys.readouterr().out
    assert main(["backtest", "--run", str(run), "--pairs", "GBPUSD", "--out", str(tmp / "one")]) == 0
    assert sorted(p.name for p in (tmp / "one" / "reports").glob("*.json")) == ["GBPUSD.json"]


def test_zero_checkpoint_backtest_deterministic(workspace, tmp_path):
    tmp, config = workspace
    from forex_a3c.neural import Architecture, ParameterSet, serialize_parameters
    ck = tmp / "zero.ck"
    serialize_parameters(ParameterSet(Architecture(window=4, hidden=8, fc1=8, fc2=8, fc3=8)), ck)
    args = ["backtest", "--checkpoint", str(ck), "--data", f"EURUSD={tmp / 'eurusd.csv'}"]
    assert main(args + ["--out", str(tmp / "z1")]) == 0
    assert main(args + ["--out", str(tmp / "z2")]) == 0
    a = (tmp / "z1" / "reports" / "EURUSD.json").read_bytes()
    assert a == (tmp / "z2" / "reports" / "EURUSD.json").read_bytes()
    rep = json.loads(a)
    assert rep["trade_count"] == 1 and rep["trades"][0]["direction"] == "LONG"


def test_window_mismatch_is_config_error(workspace, capsys):
    tmp, config = workspace
    run = tmp / "w"
    assert main(["train", "--config", config(steps=20), "--out", str(run)]) == 0
    code = main(["backtest", "--checkpoint", str(run / "checkpoint"), "--data", str(tmp / "eurusd.csv"),
                 "--window", "8", "--out", str(tmp / "w8")])
    assert code == EXIT_CONFIG
    assert "window" in capsys.readouterr().err


def test_config_errors(workspace):
    tmp, config = workspace
    assert main(["train", "--config", config("a3c-lock", "sc")]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp / "missing.ini")]) == EXIT_CONFIG
    bad = tmp / "bad.ini"
    bad.write_text("[train]\ngamma = 2\n")
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("[train]\nbogus = 1\n")
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["train", "--mode", "sarsa"])


def test_missing_data_file(workspace):
    tmp, _ = workspace
    cfg = tmp / "nodata.ini"
    cfg.write_text("[pairs]\nXXX = nothere.csv\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_DATA


def test_numeric_abort_writes_partial_checkpoint(workspace, monkeypatch):
    tmp, config = workspace
    from forex_a3c import cli, rl
    from forex_a3c.neural.network import NumericError

    def boom(*args, **kw):
        raise NumericError("injected blow-up")

    monkeypatch.setattr(rl, "_ppo_update", boom)
    out = tmp / "abort"
    code = main(["train", "--config", config("ppo", "mc", 80), "--out", str(out)])
    assert code == EXIT_NUMERIC
    assert (out / "checkpoint").exists()
    assert json.loads((out / "manifest").read_text())["status"] == "aborted"
