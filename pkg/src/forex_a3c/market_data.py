"""Candlestick ingestion, validation and train/test partitioning."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

HEADER = ("time", "open", "high", "low", "close")


class DataError(ValueError):
    """Raised when market data is missing, malformed or violates candle invariants."""

    def __init__(self, message: str, rows: Sequence[int] = ()):
        super().__init__(message)
        self.rows = list(rows)


@dataclass(frozen=True)
class Candle:
    timestamp: datetime
    open: float
    high: float
    low: float
    close: float

    def violations(self) -> List[str]:
        problems = []
        if min(self.open, self.high, self.low, self.close) <= 0:
            problems.append("non-positive price")
        if self.low > min(self.open, self.close):
            problems.append("low above min(open, close)")
        if self.high < max(self.open, self.close):
            problems.append("high below max(open, close)")
        return problems


def parse_time(text: str) -> datetime:
    """Parse an ISO-8601 instant; naive values are taken as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_time(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class CandleSeries:
    """An immutable, time-ordered candle sequence for one pair.

    Prices are held as read-only float64 arrays so that feature extraction and
    environment stepping can index them without touching Candle objects.
    """

    def __init__(self, pair_name: str, candles: Sequence[Candle]):
        self.pair_name = pair_name
        self.timestamps: Tuple[datetime, ...] = tuple(c.timestamp for c in candles)
        arrays = {}
        for name in ("open", "high", "low", "close"):
            arr = np.array([getattr(c, name) for c in candles], dtype=np.float64)
            arr.setflags(write=False)
            arrays[name] = arr
        self.open = arrays["open"]
        self.high = arrays["high"]
        self.low = arrays["low"]
        self.close = arrays["close"]
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if b <= a:
                raise DataError("non-monotone timestamps")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> Candle:
        return Candle(self.timestamps[i], float(self.open[i]), float(self.high[i]),
                      float(self.low[i]), float(self.close[i]))

    @property
    def candles(self) -> List[Candle]:
        return [self[i] for i in range(len(self))]

    def slice(self, start: int, stop: Optional[int] = None) -> "CandleSeries":
        return CandleSeries(self.pair_name, self.candles[start:stop])

    def scaled(self, factor: float) -> "CandleSeries":
        """Copy with every price multiplied by ``factor`` (used for invariance checks)."""
        return CandleSeries(self.pair_name, [
            Candle(c.timestamp, c.open * factor, c.high * factor, c.low * factor, c.close * factor)
            for c in self.candles
        ])

    def __repr__(self) -> str:
        if not len(self):
            return f"CandleSeries({self.pair_name!r}, empty)"
        return (f"CandleSeries({self.pair_name!r}, n={len(self)}, "
                f"{format_time(self.timestamps[0])}..{format_time(self.timestamps[-1])})")


@dataclass
class DatasetRegistry:
    pairs: Dict[str, CandleSeries]
    split_boundary: Optional[datetime] = None
    _train: Dict[str, CandleSeries] = field(default_factory=dict, repr=False)
    _test: Dict[str, CandleSeries] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.pairs:
            raise DataError("registry has no pairs")
        if self.split_boundary is not None:
            for name, series in self.pairs.items():
                self._train[name], self._test[name] = split_by_date(series, self.split_boundary)

    @property
    def names(self) -> List[str]:
        return sorted(self.pairs)

    def train(self, name: str) -> CandleSeries:
        return self._train[name] if self.split_boundary is not None else self.pairs[name]

    def test(self, name: str) -> CandleSeries:
        if self.split_boundary is None:
            raise DataError("registry has no split boundary")
        return self._test[name]

    def train_registry(self) -> "DatasetRegistry":
        return DatasetRegistry({n: self.train(n) for n in self.pairs})

    def test_registry(self) -> "DatasetRegistry":
        return DatasetRegistry({n: self.test(n) for n in self.pairs})


def read_rows(path) -> Tuple[List[Candle], List[Tuple[int, str]]]:
    """Parse a candle CSV, returning valid candles and (row number, reason) problems.

    Row numbers count the header as row 1, matching what a spreadsheet shows.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    candles: List[Candle] = []
    problems: List[Tuple[int, str]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"empty file: {path}")
        if tuple(h.strip().lower() for h in header) != HEADER:
            raise DataError(f"bad header {header!r}, expected {','.join(HEADER)}", [1])
        prev_ts = None
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 5:
                problems.append((rowno, f"expected 5 fields, got {len(row)}"))
                continue
            try:
                ts = parse_time(row[0])
                o, h, l, c = (float(x) for x in row[1:])
            except ValueError as exc:
                problems.append((rowno, f"malformed row: {exc}"))
                continue
            candle = Candle(ts, o, h, l, c)
            bad = candle.violations()
            if bad:
                problems.append((rowno, "; ".join(bad)))
                continue
            if prev_ts is not None and ts <= prev_ts:
                problems.append((rowno, "non-monotone timestamps"))
                continue
            prev_ts = ts
            candles.append(candle)
    return candles, problems


def load_candles(path, pair_name: Optional[str] = None) -> CandleSeries:
    """Load and validate a ``time,open,high,low,close`` CSV file."""
    candles, problems = read_rows(path)
    if problems:
        rows = [r for r, _ in problems]
        detail = "; ".join(f"row {r}: {why}" for r, why in problems[:10])
        raise DataError(f"{path}: {len(problems)} invalid row(s): {detail}", rows)
    if not candles:
        raise DataError(f"{path}: no data rows")
    if pair_name is None:
        pair_name = Path(path).stem
    return CandleSeries(pair_name, candles)


def write_candles(series: CandleSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for c in series.candles:
            writer.writerow([format_time(c.timestamp), repr(c.open), repr(c.high),
                             repr(c.low), repr(c.close)])


def split_by_date(series: CandleSeries, boundary: datetime) -> Tuple[CandleSeries, CandleSeries]:
    """Split into (timestamp < boundary, timestamp >= boundary)."""
    if boundary.tzinfo is None:
        boundary = boundary.replace(tzinfo=timezone.utc)
    if not len(series) or not (series.timestamps[0] < boundary <= series.timestamps[-1]):
        raise DataError(f"split boundary {format_time(boundary)} outside range of {series!r}")
    k = sum(1 for ts in series.timestamps if ts < boundary)
    return series.slice(0, k), series.slice(k)


def feasible_starts(length: int, episode_len: int, window: int) -> range:
    return range(window, length - episode_len)


def sample_episode_start(series, episode_len: int, window: int, rng: np.random.Generator) -> int:
    """Uniform start index i with window <= i and i + episode_len < len(series)."""
    length = series if isinstance(series, int) else len(series)
    starts = feasible_starts(length, episode_len, window)
    if len(starts) == 0:
        raise DataError(f"series of length {length} too short for window {window} "
                        f"and episode length {episode_len}")
    return int(starts[rng.integers(len(starts))])


def load_registry(entries: Dict[str, str], split_boundary=None, base_dir=None) -> DatasetRegistry:
    """Build a registry from ``pair_name -> csv path`` entries."""
    pairs = {}
    for name, p in entries.items():
        p = Path(p)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        pairs[name] = load_candles(p, name)
    if isinstance(split_boundary, str):
        split_boundary = parse_time(split_boundary)
    return DatasetRegistry(pairs, split_boundary)


def synthetic_series(closes: Iterable[float], pair_name: str = "SYNTH",
                     start: str = "2017-01-02T00:00:00Z", spread: float = 0.0) -> CandleSeries:
    """Hourly series with the given closes; open is the previous close.

    High and low bracket open/close, widened by ``spread`` (relative).
    """
    from datetime import timedelta

    t0 = parse_time(start)
    closes = list(closes)
    out = []
    prev = closes[0]
    for i, c in enumerate(closes):
        o = prev
        hi = max(o, c) * (1 + spread)
        lo = min(o, c) * (1 - spread)
        out.append(Candle(t0 + timedelta(hours=i), o, hi, lo, c))
        prev = c
    return CandleSeries(pair_name, out)


def zigzag_series(n: int, start_price: float = 1.1, up: float = 1.001, down: float = 0.999,
                  pair_name: str = "ZIGZAG") -> CandleSeries:
    """Deterministic zig-zag market: closes alternate x up, x down."""
    closes = [start_price]
    for i in range(1, n):
        closes.append(closes[-1] * (up if i % 2 else down))
    return synthetic_series(closes, pair_name)


def random_walk_series(n: int, seed: int = 0, vol: float = 0.002, start_price: float = 1.1,
                       pair_name: str = "RW") -> CandleSeries:
    rng = np.random.default_rng(seed)
    closes = start_price * np.exp(np.cumsum(rng.normal(0.0, vol, n)))
    return synthetic_series(closes, pair_name, spread=vol / 2)

