"""Distributed actor-critic (A3C, Lock and NoLock) and PPO agents for forex trading."""
__version__ = "0.1.0"

from .market_data import (Candle, CandleSeries, DataError, DatasetRegistry, load_candles,
                          split_by_date)
from .trading_env import Action, EnvConfig, TradingEnv
from .rl import TrainConfig, TrainingAborted, TrainResult, run_ppo
from .async_trainer import run_a3c
from .backtester import BacktestReport, backtest

__all__ = [
    "Action", "BacktestReport", "Candle", "CandleSeries", "DataError", "DatasetRegistry",
    "EnvConfig", "TradingEnv", "TrainConfig", "TrainResult", "TrainingAborted", "backtest",
    "load_candles", "run_a3c", "run_ppo", "split_by_date", "__version__",
]
