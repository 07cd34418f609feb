"""Greedy evaluation on held-out candles: trades, equity curve and the report metrics.

Index conventions: the action chosen at candle ``t`` is held over ``(t, t+1]``.
A rollout over a series of length L starts at candle ``window`` and yields
``L - window - 1`` actions, so action ``i`` sits at candle ``window + i``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, List, Optional, Sequence

import numpy as np

from .features import feature_matrix
from .market_data import CandleSeries, format_time
from .neural import ParameterSet, forward_actor, greedy_action
from .trading_env import DELTAS, Action, Observation

DEFAULT_EQUITY = 10_000.0
INF_SENTINEL = "inf"

TABLE_COLUMNS = [
    ("pair", "Pair"),
    ("return_pct", "Return"),
    ("sharpe", "Sharpe Ratio"),
    ("win_rate_pct", "Win Rate"),
    ("profit_factor", "Profit Factor"),
    ("max_drawdown_pct", "Max. Drawdown"),
    ("avg_drawdown_pct", "Avg. Drawdown"),
    ("max_drawdown_duration", "Max. Drawdown Duration"),
    ("avg_drawdown_duration", "Avg. Drawdown Duration"),
    ("trade_count", "Trades"),
]

METRIC_FIELDS = [
    "return_pct", "sharpe", "win_rate_pct", "profit_factor", "max_drawdown_pct",
    "avg_drawdown_pct", "max_drawdown_duration", "avg_drawdown_duration", "trade_count",
    "initial_equity", "final_equity",
]
TRADE_FIELDS = ["direction", "entry_index", "exit_index", "entry_price", "exit_price", "pnl_ratio"]


@dataclass(frozen=True)
class Trade:
    direction: Action
    entry_index: int
    exit_index: int
    entry_price: float
    exit_price: float
    pnl_ratio: float

    def __post_init__(self):
        if self.exit_index <= self.entry_index:
            raise ValueError("exit_index must follow entry_index")
        if self.direction == Action.NEUTRAL:
            raise ValueError("a trade cannot be Neutral")

    @property
    def steps(self) -> int:
        return self.exit_index - self.entry_index

    def to_dict(self) -> dict:
        return {"direction": self.direction.name, "entry_index": self.entry_index,
                "exit_index": self.exit_index, "entry_price": self.entry_price,
                "exit_price": self.exit_price, "pnl_ratio": self.pnl_ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "Trade":
        return cls(Action[str(d["direction"])], int(d["entry_index"]), int(d["exit_index"]),
                   float(d["entry_price"]), float(d["exit_price"]), float(d["pnl_ratio"]))


@dataclass
class EquityCurve:
    timestamps: List[datetime]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.timestamps) != len(self.values) or len(self.values) == 0:
            raise ValueError("equity curve needs matching, nonempty timestamps and values")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def seconds(self) -> np.ndarray:
        t0 = self.timestamps[0]
        return np.array([(t - t0).total_seconds() for t in self.timestamps])


@dataclass
class BacktestReport:
    return_pct: float
    sharpe: Optional[float]
    win_rate_pct: Optional[float]
    profit_factor: Optional[float]
    max_drawdown_pct: float
    avg_drawdown_pct: float
    max_drawdown_duration: float  # seconds
    avg_drawdown_duration: float
    trade_count: int
    initial_equity: float
    final_equity: float
    pair: str = ""
    trades: List[Trade] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"pair": self.pair}
        for name in METRIC_FIELDS:
            out[name] = _encode(getattr(self, name))
        out["trades"] = [t.to_dict() for t in self.trades]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BacktestReport":
        kw = {name: _decode(d.get(name)) for name in METRIC_FIELDS}
        kw["trade_count"] = int(kw["trade_count"])
        return cls(pair=d.get("pair", ""), trades=[Trade.from_dict(t) for t in d.get("trades", [])],
                   **kw)


def _encode(value):
    if value is None:
        return None
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and math.isinf(value):
        return INF_SENTINEL if value > 0 else "-" + INF_SENTINEL
    return value


def _decode(value):
    if value is None or value == "":
        return None
    if isinstance(value, str):
        return float(value)  # handles "inf"
    return value


# --- rollout and aggregation -------------------------------------------------------------

def rollout_policy(params: ParameterSet, series: CandleSeries, window: Optional[int] = None
                   ) -> List[Action]:
    """Greedy actions over the whole series; history is carried as during training."""
    arch_window = params.arch.window
    window = arch_window if window is None else window
    if window != arch_window:
        raise ValueError(f"window {window} does not match the network's window {arch_window}")
    n = len(series) - window - 1
    if n < 1:
        raise ValueError(f"series of {len(series)} candles is too short for window {window}")
    feats = feature_matrix(series)
    history = deque([int(Action.NEUTRAL)] * window, maxlen=window)
    eye = np.eye(len(Action))
    actions = []
    for t in range(window, window + n):
        obs = Observation(feats[t - window + 1:t + 1], eye[list(history)])
        policy, _ = forward_actor(params, obs)
        a = greedy_action(policy)
        actions.append(a)
        history.append(int(a))
    return actions


def _start_index(actions, series, start_index):
    if start_index is None:
        start_index = len(series) - len(actions) - 1
    if start_index < 0 or start_index + len(actions) >= len(series):
        raise ValueError(f"{len(actions)} actions from candle {start_index} overrun "
                         f"a series of {len(series)}")
    return start_index


def aggregate_trades(actions: Sequence, series: CandleSeries,
                     start_index: Optional[int] = None) -> List[Trade]:
    """Merge runs of identical non-Neutral actions into trades.

    ``start_index`` is the candle of the first action; by default the actions are
    right-aligned so the last one is held into the final candle.
    """
    s = _start_index(actions, series, start_index)
    close = series.close
    trades = []
    i, n = 0, len(actions)
    while i < n:
        a = Action(int(actions[i]))
        j = i
        while j + 1 < n and int(actions[j + 1]) == a:
            j += 1
        if a != Action.NEUTRAL:
            entry, exit_ = s + i, s + j + 1
            pnl = a.delta * (close[exit_] - close[entry]) / close[entry]
            trades.append(Trade(a, entry, exit_, float(close[entry]), float(close[exit_]),
                                float(pnl)))
        i = j + 1
    return trades


def equity_curve(actions: Sequence, series: CandleSeries, initial_equity: float = DEFAULT_EQUITY,
                 start_index: Optional[int] = None) -> EquityCurve:
    """Full-equity compounding: e_{k+1} = e_k * (1 + delta_k * z_{k+1})."""
    s = _start_index(actions, series, start_index)
    n = len(actions)
    close = series.close[s:s + n + 1]
    z = np.diff(close) / close[:-1]
    deltas = DELTAS[np.asarray([int(a) for a in actions], dtype=np.int64)] if n else np.zeros(0)
    values = np.empty(n + 1)
    values[0] = initial_equity
    e = float(initial_equity)
    for k in range(n):
        e = e * (1.0 + deltas[k] * z[k])
        values[k + 1] = e
    return EquityCurve(list(series.timestamps[s:s + n + 1]), values)


# --- metrics -----------------------------------------------------------------------------

@dataclass
class Drawdown:
    peak_index: int
    trough_index: int
    end_index: int  # recovery index, or the last index if unrecovered
    depth: float  # (trough - peak) / peak, <= 0
    duration: float  # seconds
    recovered: bool


def drawdowns(equity: EquityCurve) -> List[Drawdown]:
    """Peak-to-recovery episodes in one pass over the curve."""
    v = equity.values
    secs = equity.seconds
    out = []
    peak_i = 0
    trough_i = None
    for k in range(1, len(v)):
        if v[k] >= v[peak_i]:
            if trough_i is not None:
                out.append(Drawdown(peak_i, trough_i, k, float((v[trough_i] - v[peak_i]) / v[peak_i]),
                                    float(secs[k] - secs[peak_i]), True))
                trough_i = None
            peak_i = k
        elif trough_i is None or v[k] < v[trough_i]:
            trough_i = k
    if trough_i is not None:
        last = len(v) - 1
        out.append(Drawdown(peak_i, trough_i, last, float((v[trough_i] - v[peak_i]) / v[peak_i]),
                            float(secs[last] - secs[peak_i]), False))
    return out


def sharpe_ratio(pnl: Sequence[float]) -> Optional[float]:
    """Mean over sample standard deviation of per-trade returns, not annualised."""
    pnl = np.asarray(pnl, dtype=np.float64)
    if len(pnl) < 2:
        return None
    std = float(np.std(pnl, ddof=1))
    if std == 0.0 or not math.isfinite(std):
        return None
    return float(np.mean(pnl)) / std


def profit_factor(pnl: Sequence[float]) -> Optional[float]:
    pnl = np.asarray(pnl, dtype=np.float64)
    gains = float(pnl[pnl > 0].sum())
    losses = float(-pnl[pnl < 0].sum())
    if losses > 0:
        return gains / losses
    return math.inf if gains > 0 else None


def win_rate(pnl: Sequence[float]) -> Optional[float]:
    pnl = np.asarray(pnl, dtype=np.float64)
    if len(pnl) == 0:
        return None
    return 100.0 * int(np.count_nonzero(pnl > 0)) / len(pnl)


def compute_report(trades: Sequence[Trade], equity: EquityCurve,
                   initial_equity: Optional[float] = None, pair: str = "") -> BacktestReport:
    initial = float(equity.values[0] if initial_equity is None else initial_equity)
    final = float(equity.values[-1])
    pnl = [t.pnl_ratio for t in trades]
    dds = drawdowns(equity)
    depths = [d.depth for d in dds]
    durations = [d.duration for d in dds]
    return BacktestReport(
        return_pct=(final - initial) / initial * 100.0,
        sharpe=sharpe_ratio(pnl),
        win_rate_pct=win_rate(pnl),
        profit_factor=profit_factor(pnl) if pnl else None,
        max_drawdown_pct=100.0 * min(depths) if dds else 0.0,
        avg_drawdown_pct=100.0 * float(np.mean(depths)) if dds else 0.0,
        max_drawdown_duration=float(max(durations)) if dds else 0.0,
        avg_drawdown_duration=float(np.mean(durations)) if dds else 0.0,
        trade_count=len(trades),
        initial_equity=initial,
        final_equity=final,
        pair=pair,
        trades=list(trades),
    )


def backtest(params: ParameterSet, series: CandleSeries, initial_equity: float = DEFAULT_EQUITY,
             window: Optional[int] = None):
    """Roll out greedily and score; returns ``(report, equity, actions)``."""
    actions = rollout_policy(params, series, window)
    trades = aggregate_trades(actions, series)
    equity = equity_curve(actions, series, initial_equity)
    return compute_report(trades, equity, initial_equity, series.pair_name), equity, actions


def aggregate_reports(reports: Sequence[BacktestReport]) -> Dict[str, object]:
    """Cross-pair means; undefined or infinite per-pair values are left out of each mean."""
    out: Dict[str, object] = {"pair": "mean", "pairs": [r.pair for r in reports],
                              "count": len(reports)}
    for name in METRIC_FIELDS:
        vals = [getattr(r, name) for r in reports]
        vals = [float(v) for v in vals if v is not None and math.isfinite(v)]
        out[name] = float(np.mean(vals)) if vals else None
    return out


# --- serialization -----------------------------------------------------------------------

def report_json(report) -> str:
    data = report.to_dict() if isinstance(report, BacktestReport) else {
        k: _encode(v) for k, v in report.items()}
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_csv(report: BacktestReport) -> str:
    """Two sections: one metrics row, then one row per trade, separated by a blank line."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = report.to_dict()
    w.writerow(["pair"] + METRIC_FIELDS)
    w.writerow([d["pair"]] + [_csv_cell(d[k]) for k in METRIC_FIELDS])
    w.writerow([])
    w.writerow(TRADE_FIELDS)
    for t in d["trades"]:
        w.writerow([_csv_cell(t[k]) for k in TRADE_FIELDS])
    return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def parse_report_csv(text: str) -> BacktestReport:
    rows = list(csv.reader(io.StringIO(text)))
    header, values = rows[0], rows[1]
    d: dict = {"pair": values[0]}
    for k, v in zip(header[1:], values[1:]):
        d[k] = None if v == "" else (v if v in (INF_SENTINEL, "-" + INF_SENTINEL) else float(v))
    trade_rows = rows[4:] if len(rows) > 3 else []
    d["trades"] = [dict(zip(TRADE_FIELDS, r)) for r in trade_rows if r]
    return BacktestReport.from_dict(d)


def format_duration(seconds: Optional[float]) -> str:
    if seconds is None:
        return "-"
    total = int(round(seconds))
    days, rem = divmod(total, 86400)
    h, rem = divmod(rem, 3600)
    m, s = divmod(rem, 60)
    return f"{days} days {h:02d}:{m:02d}:{s:02d}"


def _table_cell(name: str, value) -> str:
    if value is None:
        return "undefined"
    if name == "pair":
        return str(value)
    if name.endswith("duration"):
        return format_duration(value)
    if name == "trade_count":
        return f"{value:.0f}" if isinstance(value, float) else str(value)
    if isinstance(value, float) and math.isinf(value):
        return INF_SENTINEL
    return f"{value:.2f}%" if name.endswith("pct") else f"{value:.4f}"


def format_table(reports: Sequence) -> str:
    """Console table with one row per report (BacktestReport or aggregate dict)."""
    rows = []
    for r in reports:
        get = (lambda k, r=r: getattr(r, k)) if isinstance(r, BacktestReport) else r.get
        rows.append([_table_cell(k, get(k)) for k, _ in TABLE_COLUMNS])
    headers = [title for _, title in TABLE_COLUMNS]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    line = " | ".join(h.ljust(w) for h, w in zip(headers, widths))
    sep = "-+-".join("-" * w for w in widths)
    body = [" | ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join([line, sep, *body]) + "\n"


def emit_report(report, fmt: str, path) -> None:
    """Write ``report`` as json, csv or text-table; a list of reports is only valid as a table."""
    fmt = fmt.lower()
    if fmt == "json":
        text = report_json(report)
    elif fmt == "csv":
        text = report_csv(report)
    elif fmt in ("text", "table", "text-table"):
        text = format_table(report if isinstance(report, (list, tuple)) else [report])
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def load_report(path) -> BacktestReport:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return BacktestReport.from_dict(json.loads(text))
    return parse_report_csv(text)


def write_equity_csv(equity: EquityCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("time,equity\n")
        for t, v in zip(equity.timestamps, equity.values):
            fh.write(f"{format_time(t)},{float(v)!r}\n")
