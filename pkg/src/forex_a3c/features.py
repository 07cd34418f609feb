"""Scale-free candle-change features and fixed-length feature windows."""
from __future__ import annotations

import numpy as np

from .market_data import Candle, CandleSeries

N_FEATURES = 5
DEFAULT_WINDOW = 16


def extract_features(prev: Candle, curr: Candle) -> np.ndarray:
    """Five ratios describing the move from ``prev`` to ``curr``.

    Order: close change, high change, low change, upper wick, lower wick.
    """
    return np.array([
        (curr.close - prev.close) / prev.close,
        (curr.high - prev.high) / prev.high,
        (curr.low - prev.low) / prev.low,
        (curr.high - curr.close) / curr.close,
        (curr.close - curr.low) / curr.close,
    ], dtype=np.float64)


def feature_matrix(series: CandleSeries) -> np.ndarray:
    """Features for every candle of ``series``, shape (len, 5).

    Row 0 has no predecessor and is filled with NaN; row k uses candles (k-1, k).
    Same arithmetic as :func:`extract_features`, so results agree bit for bit.
    """
    c, h, l = series.close, series.high, series.low
    out = np.full((len(series), N_FEATURES), np.nan)
    out[1:, 0] = (c[1:] - c[:-1]) / c[:-1]
    out[1:, 1] = (h[1:] - h[:-1]) / h[:-1]
    out[1:, 2] = (l[1:] - l[:-1]) / l[:-1]
    out[1:, 3] = (h[1:] - c[1:]) / c[1:]
    out[1:, 4] = (c[1:] - l[1:]) / c[1:]
    out.setflags(write=False)
    return out


def build_window(series: CandleSeries, t: int, window_size: int = DEFAULT_WINDOW,
                 features: np.ndarray | None = None) -> np.ndarray:
    """The ``window_size`` feature rows ending at the transition into candle ``t``.

    Oldest row first. Pass a precomputed :func:`feature_matrix` as ``features``
    to avoid recomputation in tight loops.
    """
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    if t < window_size or t >= len(series):
        raise IndexError(f"t={t} outside [{window_size}, {len(series) - 1}]")
    if features is None:
        features = feature_matrix(series)
    return np.array(features[t - window_size + 1:t + 1])
