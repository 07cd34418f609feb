import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forex_a3c.features import build_window, extract_features, feature_matrix
from forex_a3c.market_data import Candle, CandleSeries, parse_time, random_walk_series, synthetic_series
from oracles import features_ref

T0 = parse_time("2017-01-02T00:00:00Z")


def candle(o, h, l, c):
    return Candle(T0, o, h, l, c)


def test_worked_example():
    prev = candle(1.1000, 1.1050, 1.0950, 1.1020)
    curr = candle(1.1020, 1.1100, 1.1010, 1.1080)
    x = extract_features(prev, curr)
    expected = [0.00544465, 0.00452489, 0.00547945, 0.00180505, 0.00631769]
    np.testing.assert_allclose(x, expected, atol=5e-9)
    np.testing.assert_allclose(x, features_ref((1.1, 1.105, 1.095, 1.102), (1.102, 1.11, 1.101, 1.108)),
                               rtol=0, atol=1e-15)


def test_zero_cases():
    flat = candle(1.2, 1.2, 1.2, 1.2)
    assert np.all(extract_features(flat, flat) == 0)
    c = candle(1.2, 1.3, 1.1, 1.25)
    x = extract_features(c, c)
    assert np.all(x[:3] == 0) and x[3] > 0 and x[4] > 0


@st.composite
def valid_candle(draw):
    o = draw(st.floats(0.01, 1000))
    c = o * (1 + draw(st.floats(-0.05, 0.05)))
    h = max(o, c) * (1 + draw(st.floats(0, 0.05)))
    l = min(o, c) * (1 - draw(st.floats(0, 0.05)))
    return (o, h, l, c)


@settings(max_examples=300, deadline=None)
@given(valid_candle(), valid_candle(), st.floats(1e-3, 1e4))
def test_matches_reference_and_scale_free(p, c, scale):
    x = extract_features(candle(*p), candle(*c))
    np.testing.assert_allclose(x, features_ref(p, c), rtol=1e-12, atol=1e-12)
    assert x[3] >= 0 and x[4] >= 0
    ps = tuple(v * scale for v in p)
    cs = tuple(v * scale for v in c)
    np.testing.assert_allclose(extract_features(candle(*ps), candle(*cs)), x, rtol=1e-12, atol=1e-12)


def test_bulk_agreement_with_reference():
    rng = np.random.default_rng(0)
    n = 100_000
    o = rng.uniform(0.5, 200, n)
    c = o * np.exp(rng.normal(0, 0.01, n))
    h = np.maximum(o, c) * (1 + rng.uniform(0, 0.01, n))
    l = np.minimum(o, c) * (1 - rng.uniform(0, 0.01, n))
    ref = np.array([features_ref((o[i], h[i], l[i], c[i]), (o[i + 1], h[i + 1], l[i + 1], c[i + 1]))
                    for i in range(n - 1)])
    series_like = type("S", (), {"close": c, "high": h, "low": l, "__len__": lambda self: n})()
    got = feature_matrix(series_like)[1:]
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_matrix_matches_pairwise():
    s = random_walk_series(40, seed=2)
    F = feature_matrix(s)
    assert np.isnan(F[0]).all()
    for k in range(1, len(s)):
        assert np.array_equal(F[k], extract_features(s[k - 1], s[k]))


def test_window_indexing():
    s = random_walk_series(60, seed=5)
    w = build_window(s, 16, 16)
    assert w.shape == (16, 5)
    for k in range(16):
        assert np.array_equal(w[k], extract_features(s[k], s[k + 1]))
    with pytest.raises(IndexError):
        build_window(s, 15, 16)
    with pytest.raises(IndexError):
        build_window(s, 60, 16)


def test_constant_series_window_is_zero():
    s = synthetic_series([1.3] * 30)
    assert np.all(build_window(s, 20, 16) == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.data())
def test_window_shift(window, data):
    s = random_walk_series(60, seed=window)
    t = data.draw(st.integers(window, len(s) - 2))
    a, b = build_window(s, t, window), build_window(s, t + 1, window)
    assert np.array_equal(a[1:], b[:-1])
    assert np.array_equal(b[-1], extract_features(s[t], s[t + 1]))
