"""Episodic Long/Short/Neutral trading environment over candle series."""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .features import DEFAULT_WINDOW, feature_matrix
from .market_data import CandleSeries, DataError, DatasetRegistry, feasible_starts

N_ACTIONS = 3


class Action(enum.IntEnum):
    LONG = 0
    SHORT = 1
    NEUTRAL = 2

    @property
    def delta(self) -> int:
        return _DELTAS[self]

    @classmethod
    def parse(cls, text: str) -> "Action":
        return {"L": cls.LONG, "S": cls.SHORT, "N": cls.NEUTRAL}[text.strip().upper()[:1]]


_DELTAS = {Action.LONG: 1, Action.SHORT: -1, Action.NEUTRAL: 0}
DELTAS = np.array([1.0, -1.0, 0.0])
_EYE = np.eye(N_ACTIONS)


@dataclass
class EnvConfig:
    window_size: int = DEFAULT_WINDOW
    episode_len: int = 600
    mode: str = "sc"
    pair: Optional[str] = None

    def __post_init__(self):
        if self.window_size < 1 or self.episode_len < 1:
            raise ValueError("window_size and episode_len must be >= 1")
        self.mode = self.mode.lower()
        if self.mode not in ("sc", "mc"):
            raise ValueError(f"unknown scenario {self.mode!r}")


@dataclass
class Observation:
    features: np.ndarray  # (window, 5), oldest first
    history: np.ndarray  # (window, 3) one-hot past actions, oldest first

    @property
    def flat_history(self) -> np.ndarray:
        return self.history.reshape(-1)


@dataclass(frozen=True)
class EpisodeDescriptor:
    pair: str
    start: int
    seed: Optional[int] = None

    def to_text(self) -> str:
        return f"pair={self.pair} start={self.start} seed={self.seed}"

    @classmethod
    def from_text(cls, text: str) -> "EpisodeDescriptor":
        fields = dict(tok.split("=", 1) for tok in text.split())
        seed = fields.get("seed", "None")
        return cls(fields["pair"], int(fields["start"]), None if seed == "None" else int(seed))


@dataclass
class StepResult:
    observation: Observation
    reward: float
    z: float
    done: bool


class TradingEnv:
    """One environment per worker; the registry it reads is shared and immutable."""

    def __init__(self, registry: DatasetRegistry, config: Optional[EnvConfig] = None):
        self.registry = registry
        self.config = config or EnvConfig()
        if self.config.mode == "sc":
            if self.config.pair is None:
                if len(registry.pairs) != 1:
                    raise DataError("single-currency mode needs exactly one designated pair")
                self.config.pair = next(iter(registry.pairs))
            if self.config.pair not in registry.pairs:
                raise DataError(f"pair {self.config.pair!r} not in registry")
            self._choices = [self.config.pair]
        else:
            self._choices = registry.names
        self._features: Dict[str, np.ndarray] = {}
        self.descriptor: Optional[EpisodeDescriptor] = None
        self.series: Optional[CandleSeries] = None
        self.t = 0
        self.steps = 0
        self.done = True

    @property
    def window(self) -> int:
        return self.config.window_size

    def _feats(self, pair: str) -> np.ndarray:
        if pair not in self._features:
            self._features[pair] = feature_matrix(self.registry.pairs[pair])
        return self._features[pair]

    def reset(self, rng: np.random.Generator) -> Tuple[Observation, EpisodeDescriptor]:
        """Draw an episode seed from ``rng`` and start the episode it determines."""
        seed = int(rng.integers(2**63 - 1))
        return self.reset_to(self.descriptor_for_seed(seed))

    def descriptor_for_seed(self, seed: int) -> EpisodeDescriptor:
        sub = np.random.default_rng(seed)
        pair = self._choices[int(sub.integers(len(self._choices)))] if len(self._choices) > 1 \
            else self._choices[0]
        n = len(self.registry.pairs[pair])
        starts = feasible_starts(n, self.config.episode_len, self.window)
        if len(starts) == 0:
            raise DataError(f"{pair}: no feasible episode start (length {n})")
        return EpisodeDescriptor(pair, int(starts[sub.integers(len(starts))]), seed)

    def reset_to(self, descriptor: EpisodeDescriptor) -> Tuple[Observation, EpisodeDescriptor]:
        series = self.registry.pairs[descriptor.pair]
        if descriptor.start not in feasible_starts(len(series), self.config.episode_len, self.window):
            raise DataError(f"infeasible episode start {descriptor.start} for {descriptor.pair}")
        self.descriptor = descriptor
        self.series = series
        self.t = descriptor.start
        self.steps = 0
        self.done = False
        self._history = deque([int(Action.NEUTRAL)] * self.window, maxlen=self.window)
        return self.observe(), descriptor

    def observe(self) -> Observation:
        feats = self._feats(self.descriptor.pair)
        w = self.window
        return Observation(np.array(feats[self.t - w + 1:self.t + 1]), _EYE[list(self._history)])

    def step(self, action) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        action = Action(int(action))
        close = self.series.close
        z = (close[self.t + 1] - close[self.t]) / close[self.t]
        reward = action.delta * z
        self.t += 1
        self.steps += 1
        self._history.append(int(action))
        self.done = self.steps >= self.config.episode_len
        return StepResult(self.observe(), float(reward), float(z), self.done)


def history_matrix(actions, window: int) -> np.ndarray:
    """One-hot history rows for the last ``window`` actions, padded with Neutral."""
    acts = [int(Action.NEUTRAL)] * window + [int(a) for a in actions]
    return _EYE[acts[-window:]]
