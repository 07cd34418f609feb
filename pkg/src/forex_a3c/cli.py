"""Command line entry point: ``inspect``, ``train``, ``backtest`` and ``report``.

Runs are configured with an INI file plus flag overrides (flags win)::

    [run]
    mode = a3c-lock          ; ppo | a3c-lock | a3c-nolock
    scenario = sc            ; sc | mc
    pair = EURUSD            ; required for sc when several pairs are listed
    out = runs/eurusd-lock
    backend = process        ; process | thread

    [data]
    split_boundary = 2017-05-01T00:00:00Z

    [pairs]
    EURUSD = data/eurusd.csv

    [train]
    total_steps = 100000
    learning_rate = 4e-5
    seed = 0

Relative data paths resolve against the config file's directory.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import subprocess
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .backtester import (aggregate_reports, backtest, emit_report, format_table, load_report,
                         report_csv, report_json, write_equity_csv)
from .market_data import DataError, DatasetRegistry, format_time, load_registry, read_rows
from .neural import (Architecture, CheckpointError, NumericError, deserialize_parameters,
                     serialize_parameters)
from .rl import TrainConfig, TrainingAborted, run_ppo
from .trading_env import EnvConfig, TradingEnv

log = logging.getLogger("forex_a3c")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MODES = ("ppo", "a3c-lock", "a3c-nolock")
SCENARIOS = ("sc", "mc")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "a3c-lock"
    scenario: str = "sc"
    pair: Optional[str] = None
    pairs: Dict[str, str] = field(default_factory=dict)
    split_boundary: Optional[str] = None
    out: str = "run"
    backend: str = "process"
    base_dir: str = "."

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be sc or mc, got {self.scenario!r}")
        if self.backend not in ("process", "thread"):
            raise ConfigError(f"backend must be process or thread, got {self.backend!r}")
        if self.pair is not None and self.pairs and self.pair not in self.pairs:
            raise ConfigError(f"pair {self.pair!r} is not among the configured pairs")
        if self.scenario == "sc" and self.pair is None and len(self.pairs) > 1:
            raise ConfigError("scenario sc needs exactly one designated pair (set pair =)")
        return self

    def env_config(self) -> EnvConfig:
        return EnvConfig(self.train.window, self.train.episode_len, self.scenario, self.pair)

    def resolved_pairs(self) -> Dict[str, str]:
        base = Path(self.base_dir)
        return {k: str((Path(v) if Path(v).is_absolute() else base / v).resolve())
                for k, v in sorted(self.pairs.items())}

    def to_dict(self) -> dict:
        return {"run": {"mode": self.mode, "scenario": self.scenario, "pair": self.pair,
                        "out": self.out, "backend": self.backend},
                "data": {"split_boundary": self.split_boundary},
                "pairs": self.resolved_pairs(),
                "train": self.train.to_dict()}

    def config_hash(self) -> str:
        # the output directory does not change what is trained
        d = self.to_dict()
        d["run"].pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, values in self.to_dict().items():
            cp[section] = {k: _ini_value(v) for k, v in values.items() if v is not None}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)


def _ini_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name: str, text: str):
    kind = _TRAIN_TYPES[name]
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "int":
            return int(float(text)) if "e" in text.lower() else int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"train.{name}: cannot parse {text!r} as {kind}") from None


def load_run_config(path: Optional[str]) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from None
    known = {"run", "data", "pairs", "train"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"{p}: unknown section(s) {sorted(unknown)}")
    cfg.base_dir = str(p.parent)
    if cp.has_section("run"):
        run = dict(cp["run"])
        for key in ("mode", "scenario", "pair", "out", "backend"):
            if key in run:
                setattr(cfg, key, run.pop(key).strip())
        if run:
            raise ConfigError(f"{p}: unknown [run] key(s) {sorted(run)}")
        if "out" in cp["run"] and not Path(cfg.out).is_absolute():
            cfg.out = str(p.parent / cfg.out)
    if cp.has_section("data"):
        cfg.split_boundary = cp["data"].get("split_boundary") or None
    if cp.has_section("pairs"):
        cfg.pairs = {k: v.strip() for k, v in cp["pairs"].items()}
    if cp.has_section("train"):
        values = {}
        for k, v in cp["train"].items():
            if k not in _TRAIN_TYPES:
                raise ConfigError(f"{p}: unknown [train] key {k!r}")
            values[k] = _coerce(k, v.strip())
        cfg.train = _make_train(values)
    return cfg


def _make_train(values: dict, base: Optional[TrainConfig] = None) -> TrainConfig:
    data = (base or TrainConfig()).to_dict()
    data.update(values)
    try:
        return TrainConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    for key in ("mode", "scenario", "pair", "out", "backend", "split_boundary"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "data", None):
        cfg.pairs = dict(_pair_spec(spec) for spec in args.data)
        cfg.pairs = {k: str(Path(v).resolve()) for k, v in cfg.pairs.items()}
    cfg.out = str(Path(cfg.out).resolve())
    values = {name: getattr(args, name) for name in _TRAIN_TYPES
              if getattr(args, name, None) is not None}
    if values:
        cfg.train = _make_train(values, cfg.train)
    return cfg.validate()


def _pair_spec(spec: str):
    """``NAME=path`` or a bare path whose stem names the pair."""
    if "=" in spec:
        name, path = spec.split("=", 1)
        return name.strip(), path.strip()
    return Path(spec).stem.upper(), spec


def version_string() -> str:
    """Package version plus a git-describe suffix when run from a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        rev = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


# --- commands ----------------------------------------------------------------------------

def cmd_inspect(args) -> int:
    status = EXIT_OK
    for path in args.paths:
        candles, problems = read_rows(path)
        if not candles and not problems:
            raise DataError(f"{path}: no data rows")
        name = args.pair or Path(path).stem.upper()
        rng = (f"{format_time(candles[0].timestamp)}..{format_time(candles[-1].timestamp)}"
               if candles else "-")
        print(f"pair: {name}")
        print(f"rows: {len(candles) + len(problems)}, range: {rng}, violations: {len(problems)}")
        for rowno, why in problems:
            print(f"  row {rowno}: {why}")
        if problems:
            status = EXIT_DATA
    return status


def _registry(cfg: RunConfig) -> DatasetRegistry:
    if not cfg.pairs:
        raise ConfigError("no data: list pairs under [pairs] or pass --data")
    return load_registry(cfg.resolved_pairs(), cfg.split_boundary)


def _write_log(path: Path, records: List[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=str) + "\n")


def cmd_train(args) -> int:
    cfg = apply_overrides(load_run_config(args.config), args)
    registry = _registry(cfg)
    train_reg = registry.train_registry() if cfg.split_boundary else registry
    env_cfg = cfg.env_config()
    TradingEnv(train_reg, env_cfg)  # validate scenario against the data before forking

    def env_factory():
        return TradingEnv(train_reg, env_cfg)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    manifest = {
        "mode": cfg.mode, "scenario": cfg.scenario, "pair": cfg.pair,
        "pairs": sorted(train_reg.names), "backend": cfg.backend if cfg.mode != "ppo" else None,
        "seeds": {"seed": cfg.train.seed,
                  "workers": [cfg.train.seed + k for k in range(cfg.train.workers)]
                  if cfg.mode != "ppo" else []},
        "config_hash": cfg.config_hash(), "version": version_string(),
        "architecture": cfg.train.architecture().to_dict(), "total_steps": cfg.train.total_steps,
    }
    t0 = time.perf_counter()
    status, code, err = "complete", EXIT_OK, None
    try:
        if cfg.mode == "ppo":
            result = run_ppo(env_factory, cfg.train)
        else:
            from .async_trainer import run_a3c

            result = run_a3c(env_factory, cfg.train, cfg.mode, backend=cfg.backend)
        params, records, stats = result.params, result.log, result.stats
    except TrainingAborted as exc:
        params, records, stats = exc.params, exc.log, {}
        status, err = "aborted", str(exc)
        code = EXIT_NUMERIC
    wall = time.perf_counter() - t0
    if params is not None:
        serialize_parameters(params, out / "checkpoint")
    _write_log(out / "log.jsonl", records)
    manifest.update({"status": status, "wall_time_sec": wall, "error": err,
                     "stats": {k: v for k, v in stats.items() if k != "wall_time"}})
    (out / "manifest").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    if code:
        print(f"training aborted after {wall:.1f}s: {err}", file=sys.stderr)
        print(f"partial checkpoint: {out / 'checkpoint'}", file=sys.stderr)
    else:
        print(f"{cfg.mode} {cfg.scenario}: {cfg.train.total_steps} steps in {wall:.1f}s "
              f"({wall / 60:.2f} min)")
        print(f"checkpoint: {out / 'checkpoint'}")
    return code


def _check_architecture(arch: Architecture, train: TrainConfig, strict: bool) -> None:
    want = train.architecture()
    if arch.window != want.window:
        raise ConfigError(f"checkpoint window {arch.window} does not match configured window "
                          f"{want.window}")
    if strict and arch != want:
        diff = {k: (v, getattr(want, k)) for k, v in arch.to_dict().items()
                if getattr(want, k) != v}
        raise ConfigError(f"checkpoint architecture differs from config (checkpoint, config): "
                          f"{diff}")


def cmd_backtest(args) -> int:
    run_dir = Path(args.run) if args.run else None
    config = args.config or (str(run_dir / "config.ini") if run_dir and
                             (run_dir / "config.ini").exists() else None)
    cfg = apply_overrides(load_run_config(config), args)
    checkpoint = args.checkpoint or (str(run_dir / "checkpoint") if run_dir else None)
    if checkpoint is None:
        raise ConfigError("pass --checkpoint or --run")
    params = deserialize_parameters(checkpoint)
    explicit = config is not None or args.window is not None
    if explicit:
        _check_architecture(params.arch, cfg.train, strict=config is not None)
    registry = _registry(cfg)
    test_reg = registry.test_registry() if cfg.split_boundary else registry
    names = test_reg.names
    if args.pairs:
        wanted = [p.strip() for p in args.pairs.split(",") if p.strip()]
        missing = [p for p in wanted if p not in test_reg.pairs]
        if missing:
            raise ConfigError(f"unknown pair(s) {missing}; available: {names}")
        names = wanted
    out = Path(args.out) if args.out else (run_dir if run_dir else Path(cfg.out))
    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for name in names:
        report, equity, _ = backtest(params, test_reg.pairs[name], args.initial_equity)
        emit_report(report, "json", reports_dir / f"{name}.json")
        if args.equity:
            write_equity_csv(equity, reports_dir / f"{name}.equity.csv")
        reports.append(report)
    rows: list = list(reports)
    if len(reports) > 1:
        agg = aggregate_reports(reports)
        (reports_dir / "aggregate.json").write_text(report_json(agg), encoding="utf-8")
        rows.append(agg)
    print(format_table(rows), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    paths: List[Path] = []
    for p in map(Path, args.paths):
        if p.is_dir():
            paths.extend(sorted(q for q in p.glob("*.json") if q.name != "aggregate.json"))
        else:
            paths.append(p)
    if not paths:
        raise DataError("no report files found")
    reports = [load_report(p) for p in paths]
    rows: list = list(reports)
    if len(reports) > 1:
        rows.append(aggregate_reports(reports))
    if args.format in ("text", "table"):
        text = format_table(rows)
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            print(text, end="")
        return EXIT_OK
    if len(reports) != 1:
        raise ConfigError(f"--format {args.format} takes exactly one report")
    if args.output:
        emit_report(reports[0], args.format, args.output)
    else:
        print(report_json(reports[0]) if args.format == "json" else report_csv(reports[0]), end="")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training overrides")
    for f in fields(TrainConfig):
        kind = f.type if isinstance(f.type, str) else f.type.__name__
        flag = "--" + f.name.replace("_", "-")
        names = [flag, "--steps"] if f.name == "total_steps" else [flag]
        if f.name == "learning_rate":
            names.append("--lr")
        g.add_argument(*names, dest=f.name, type=int if kind == "int" else float, default=None,
                       help=f"default {f.default}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--pair", help="designated pair for the sc scenario")
    p.add_argument("--data", action="append", metavar="[NAME=]CSV",
                   help="add a pair (repeatable); NAME defaults to the file stem")
    p.add_argument("--split-boundary", dest="split_boundary", help="UTC train/test boundary")
    p.add_argument("--out", help="output directory")
    p.add_argument("--backend", choices=("process", "thread"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forex-a3c", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="summarise and validate candle CSV files")
    p.add_argument("paths", nargs="+")
    p.add_argument("--pair", help="pair name to display (default: file stem)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train with ppo, a3c-lock or a3c-nolock")
    _add_run_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="greedy backtest of a checkpoint on test data")
    _add_run_flags(p)
    _add_train_flags(p)
    p.add_argument("--run", help="run directory (supplies checkpoint and config.ini)")
    p.add_argument("--checkpoint")
    p.add_argument("--pairs", help="comma-separated subset of pairs")
    p.add_argument("--initial-equity", dest="initial_equity", type=float, default=10_000.0)
    p.add_argument("--equity", action="store_true", help="also write time,equity CSV per pair")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", help="render saved reports as a table, json or csv")
    p.add_argument("paths", nargs="+", help="report files or reports/ directories")
    p.add_argument("--format", choices=("text", "table", "json", "csv"), default="text")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
