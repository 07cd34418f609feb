import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from forex_a3c.market_data import DatasetRegistry, random_walk_series, zigzag_series  # noqa: E402
from forex_a3c.neural import Architecture  # noqa: E402
from forex_a3c.rl import TrainConfig  # noqa: E402
from forex_a3c.trading_env import EnvConfig, TradingEnv  # noqa: E402

TINY = dict(hidden=8, fc1=8, fc2=8, fc3=8, window=4)


@pytest.fixture
def tiny_arch():
    return Architecture(**TINY)


@pytest.fixture
def tiny_config():
    return TrainConfig(episode_len=40, n_steps=5, workers=2, total_steps=200, **TINY)


@pytest.fixture
def rw_registry():
    return DatasetRegistry({"EURUSD": random_walk_series(300, seed=3, pair_name="EURUSD"),
                            "GBPUSD": random_walk_series(300, seed=4, pair_name="GBPUSD")})


@pytest.fixture
def zz_registry():
    return DatasetRegistry({"ZZ": zigzag_series(200, pair_name="ZZ")})


def env_factory(registry, window, episode_len, mode="mc", pair=None):
    cfg = EnvConfig(window, episode_len, mode, pair)
    return lambda: TradingEnv(registry, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
