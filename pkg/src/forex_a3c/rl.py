"""Returns, advantages, actor-critic and PPO losses, and the single-agent PPO trainer.

Loss functions come in pairs: the scalar value (for logging and finite-difference
checks) and the gradient seed with respect to the network heads, which
:func:`forex_a3c.neural.backward` propagates into parameter gradients.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, List, Optional, Sequence

import numpy as np

from .neural import (Architecture, ParameterSet, actor_batch, backward, critic_batch,
                     forward_actor, init_parameters, sample_action, stack_observations)
from .neural.network import NumericError
from .optim import Adam, AdamConfig, clip_grad_norm
from .trading_env import Observation, TradingEnv

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    gamma: float = 0.99
    learning_rate: float = 4e-5
    window: int = 16
    episode_len: int = 600
    total_steps: int = 1_000_000
    n_steps: int = 20
    workers: int = 5
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    clip_epsilon: float = 0.2
    ppo_epochs: int = 4
    ppo_minibatch: int = 100
    max_grad_norm: float = 40.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: int = 128
    fc1: int = 32
    fc2: int = 64
    fc3: int = 64
    input_scale: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_steps < 1 or self.window < 1 or self.episode_len < 1:
            raise ValueError("n_steps, window and episode_len must be >= 1")
        if self.total_steps < 0 or self.workers < 1:
            raise ValueError("total_steps must be >= 0 and workers >= 1")

    def architecture(self) -> Architecture:
        return Architecture(hidden=self.hidden, fc1=self.fc1, fc2=self.fc2, fc3=self.fc3,
                            window=self.window, input_scale=self.input_scale)

    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class TrainResult:
    params: ParameterSet
    log: List[dict]
    stats: dict = field(default_factory=dict)


class TrainingAborted(RuntimeError):
    """Training stopped on a numeric failure; ``params`` holds the last good state."""

    def __init__(self, message: str, params: Optional[ParameterSet] = None, log=None):
        super().__init__(message)
        self.params = params
        self.log = log or []


@dataclass
class Trajectory:
    observations: List[Observation] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)
    values: Optional[np.ndarray] = None
    old_log_probs: Optional[np.ndarray] = None
    bootstrap_value: float = 0.0
    next_observation: Optional[Observation] = None

    def __len__(self) -> int:
        return len(self.rewards)

    def append(self, obs: Observation, action: int, reward: float, log_prob: float, done: bool):
        self.observations.append(obs)
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.log_probs.append(float(log_prob))
        self.dones.append(bool(done))


def discounted_returns(rewards: Sequence[float], gamma: float, bootstrap_value: float = 0.0) -> np.ndarray:
    """R_i = r_i + gamma * R_{i+1}, seeded with ``bootstrap_value`` past the last step."""
    if len(rewards) == 0:
        raise ValueError("empty trajectory")
    out = np.empty(len(rewards))
    R = float(bootstrap_value)
    for i in range(len(rewards) - 1, -1, -1):
        R = rewards[i] + gamma * R
        out[i] = R
    return out


def advantage(returns: Sequence[float], values: Sequence[float]) -> np.ndarray:
    returns = np.asarray(returns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if returns.shape != values.shape:
        raise ValueError(f"length mismatch: {returns.shape} vs {values.shape}")
    return returns - values


def a3c_policy_loss(log_probs, advantages) -> float:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    return float(-np.mean(log_probs * np.asarray(advantages, dtype=np.float64)))


def a3c_value_loss(returns, values) -> float:
    diff = np.asarray(returns, dtype=np.float64) - np.asarray(values, dtype=np.float64)
    return float(np.mean(diff * diff))


def ppo_objective(new_log_probs, old_log_probs, advantages, clip_epsilon) -> np.ndarray:
    """Per-step clipped surrogate min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.exp(np.asarray(new_log_probs) - np.asarray(old_log_probs))
    A = np.asarray(advantages, dtype=np.float64)
    return np.minimum(ratio * A, np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon) * A)


def ppo_loss(new_log_probs, old_log_probs, advantages, entropy, clip_epsilon, entropy_coef) -> float:
    """Negated clipped objective with entropy bonus; minimising it maximises the surrogate."""
    obj = ppo_objective(new_log_probs, old_log_probs, advantages, clip_epsilon)
    return float(-np.mean(obj) - entropy_coef * np.mean(entropy))


# --- gradient seeds w.r.t. head outputs -------------------------------------------------

def _entropy_seed(policy, entropy_coef: float, n: int) -> np.ndarray:
    # d(-coef * mean H)/dlogits; dH/dz_j = -p_j (log p_j + H)
    return (entropy_coef / n) * policy.probs * (policy.log_probs + policy.entropy[:, None])


def a3c_actor_seed(policy, actions, advantages, entropy_coef: float) -> np.ndarray:
    """d/dlogits of a3c_policy_loss - entropy_coef * mean(entropy); advantages held constant."""
    n = len(actions)
    onehot = np.eye(policy.probs.shape[1])[np.asarray(actions)]
    A = np.asarray(advantages, dtype=np.float64)[:, None]
    return -(A / n) * (onehot - policy.probs) + _entropy_seed(policy, entropy_coef, n)


def value_seed(returns, values, value_coef: float) -> np.ndarray:
    """d/dV of value_coef * a3c_value_loss."""
    values = np.asarray(values, dtype=np.float64)
    return value_coef * 2.0 * (values - np.asarray(returns)) / len(values)


def ppo_actor_seed(policy, actions, old_log_probs, advantages, clip_epsilon: float,
                   entropy_coef: float) -> np.ndarray:
    n = len(actions)
    actions = np.asarray(actions)
    onehot = np.eye(policy.probs.shape[1])[actions]
    new = policy.log_probs[np.arange(n), actions]
    ratio = np.exp(new - np.asarray(old_log_probs))
    A = np.asarray(advantages, dtype=np.float64)
    unclipped = ratio * A
    clipped = np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon) * A
    # where the clipped branch is strictly smaller the ratio lies outside the band: zero slope
    d_obj = np.where(unclipped <= clipped, unclipped, 0.0)
    return (-d_obj / n)[:, None] * (onehot - policy.probs) + _entropy_seed(policy, entropy_coef, n)


def segment_returns(rewards, values, dones, gamma: float, n_steps: int,
                    final_bootstrap: float) -> np.ndarray:
    """n-step returns over a long rollout, cut into ``n_steps`` chunks.

    Each chunk bootstraps with the critic value of the state after it, or 0 when
    the chunk ends the episode.
    """
    N = len(rewards)
    R = np.empty(N)
    for start in range(0, N, n_steps):
        stop = min(start + n_steps, N)
        if dones[stop - 1]:
            boot = 0.0
        elif stop < N:
            boot = float(values[stop])
        else:
            boot = float(final_bootstrap)
        R[start:stop] = discounted_returns(rewards[start:stop], gamma, boot)
    return R


# --- A3C segment gradient, shared by the async workers and the serial reference -----------

@dataclass
class SegmentStats:
    policy_loss: float
    value_loss: float
    entropy: float
    reward_sum: float
    steps: int


def a3c_segment_gradients(params: ParameterSet, traj: Trajectory, config: TrainConfig,
                          grads: Optional[ParameterSet] = None):
    """Accumulate actor and critic gradients for one n-step segment.

    The critic is evaluated on the segment states plus the successor state, whose
    value is the bootstrap when the segment did not end the episode.
    """
    if grads is None:
        grads = params.zeros_like()
    n = len(traj)
    terminal = traj.dones[-1]
    obs = list(traj.observations)
    if not terminal:
        obs.append(traj.next_observation)
    feats, hists = stack_observations(obs)
    policy, atape = actor_batch(params, feats[:n], hists[:n])
    values, ctape = critic_batch(params, feats, hists)
    boot = 0.0 if terminal else float(values[n])
    traj.bootstrap_value = boot
    traj.values = values[:n]
    R = discounted_returns(traj.rewards, config.gamma, boot)
    A = advantage(R, values[:n])
    actions = np.asarray(traj.actions)
    backward(atape, a3c_actor_seed(policy, actions, A, config.entropy_coef), grads)
    vseed = np.zeros(len(values))
    vseed[:n] = value_seed(R, values[:n], config.value_coef)
    backward(ctape, vseed, grads)
    lp = policy.log_probs[np.arange(n), actions]
    stats = SegmentStats(a3c_policy_loss(lp, A), a3c_value_loss(R, values[:n]),
                         float(np.mean(policy.entropy)), float(np.sum(traj.rewards)), n)
    return grads, stats


def act(params: ParameterSet, obs: Observation, rng: np.random.Generator):
    policy, _ = forward_actor(params, obs)
    return sample_action(policy, rng)


# --- single-agent PPO --------------------------------------------------------------------

def run_ppo(env_factory: Callable[[], TradingEnv], config: TrainConfig,
            params: Optional[ParameterSet] = None, on_episode: Optional[Callable] = None
            ) -> TrainResult:
    """Train with PPO on full-episode rollouts.

    ``log`` has one record per (possibly truncated) episode. The run is serial and
    fully determined by ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_parameters(rng, config.architecture())
    env = env_factory()
    opt = Adam(params.flat.size, config.adam())
    records = []
    steps_done = 0
    episode = 0
    t_start = time.perf_counter()
    while steps_done < config.total_steps:
        t0 = time.perf_counter()
        obs, desc = env.reset(rng)
        traj = Trajectory()
        budget = min(config.episode_len, config.total_steps - steps_done)
        try:
            while len(traj) < budget:
                action, logp = act(params, obs, rng)
                res = env.step(action)
                traj.append(obs, action, res.reward, logp, res.done)
                obs = res.observation
                if res.done:
                    break
            traj.next_observation = obs
            stats = _ppo_update(params, traj, config, opt, rng)
        except NumericError as exc:
            raise TrainingAborted(f"episode {episode}: {exc}", params, records) from exc
        steps_done += len(traj)
        elapsed = time.perf_counter() - t0
        rec = {
            "episode": episode, "pair": desc.pair, "start": desc.start, "seed": desc.seed,
            "steps": len(traj), "reward_sum": float(np.sum(traj.rewards)),
            "steps_per_sec": len(traj) / elapsed if elapsed > 0 else math.inf,
            "wall": elapsed, **stats,
        }
        records.append(rec)
        if on_episode is not None:
            on_episode(rec)
        episode += 1
    stats = {"mode": "ppo", "workers": 1, "episodes": episode, "steps": steps_done,
             "updates": opt.steps, "wall_time": time.perf_counter() - t_start}
    return TrainResult(params, records, stats)


def _ppo_update(params, traj: Trajectory, config: TrainConfig, opt: Adam, rng) -> dict:
    n = len(traj)
    obs = traj.observations + ([] if traj.dones[-1] else [traj.next_observation])
    feats, hists = stack_observations(obs)
    values_all, _ = critic_batch(params, feats, hists)
    final_boot = 0.0 if traj.dones[-1] else float(values_all[n])
    R = segment_returns(traj.rewards, values_all[:n], traj.dones, config.gamma,
                        config.n_steps, final_boot)
    A = advantage(R, values_all[:n])
    old_lp = np.asarray(traj.log_probs)
    actions = np.asarray(traj.actions)
    feats, hists = feats[:n], hists[:n]
    grads = params.zeros_like()
    losses = []
    batch = max(1, min(config.ppo_minibatch, n))
    for _ in range(config.ppo_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = np.sort(order[lo:lo + batch])
            policy, atape = actor_batch(params, feats[idx], hists[idx])
            values, ctape = critic_batch(params, feats[idx], hists[idx])
            new_lp = policy.log_probs[np.arange(len(idx)), actions[idx]]
            loss = (ppo_loss(new_lp, old_lp[idx], A[idx], policy.entropy, config.clip_epsilon,
                             config.entropy_coef)
                    + config.value_coef * a3c_value_loss(R[idx], values))
            if not math.isfinite(loss):
                raise NumericError("non-finite PPO loss")
            losses.append(loss)
            grads.flat[:] = 0.0
            backward(atape, ppo_actor_seed(policy, actions[idx], old_lp[idx], A[idx],
                                           config.clip_epsilon, config.entropy_coef), grads)
            backward(ctape, value_seed(R[idx], values, config.value_coef), grads)
            clip_grad_norm(grads.flat, config.max_grad_norm)
            opt.step(params.flat, grads.flat)
    return {"loss": float(np.mean(losses)), "updates": len(losses)}
