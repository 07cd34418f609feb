"""Forward passes, exact reverse-mode gradients and action sampling.

Each stack is LSTM (final hidden state) -> fc1 -> ReLU -> concat(history) ->
fc2 -> ReLU -> fc3 -> ReLU -> head. The actor head feeds a softmax over
(Long, Short, Neutral); the critic head is a scalar value.

Batches hold B independent sequences: features (B, T, 5) and one-hot action
history (B, T, 3) or its flattened form (B, 3T).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..trading_env import Action, Observation
from . import kernels
from .params import Gradients, ParameterSet


class NumericError(FloatingPointError):
    """A forward or backward pass produced NaN or infinity."""


@dataclass
class PolicyOutput:
    logits: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray
    entropy: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "PolicyOutput":
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        probs = np.exp(log_probs)
        entropy = -(probs * log_probs).sum(axis=-1)
        return cls(logits, probs, log_probs, entropy)

    def __getitem__(self, i) -> "PolicyOutput":
        return PolicyOutput(self.logits[i], self.probs[i], self.log_probs[i], self.entropy[i])


@dataclass
class Tape:
    """Everything a backward pass through one stack needs."""

    params: ParameterSet
    net: str
    x: np.ndarray  # (T, B, F) time-major scaled features
    hist: np.ndarray  # (B, 3T)
    lstm: tuple  # (hs, cs, gates) from the kernel
    z1: np.ndarray
    u: np.ndarray  # concat(relu(z1), hist)
    z2: np.ndarray
    a2: np.ndarray
    z3: np.ndarray
    a3: np.ndarray

    @property
    def batch(self) -> int:
        return self.x.shape[1]


def stack_observations(observations: Sequence[Observation]) -> Tuple[np.ndarray, np.ndarray]:
    feats = np.stack([o.features for o in observations])
    hists = np.stack([o.flat_history for o in observations])
    return feats, hists


def _check(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


def forward_net(params: ParameterSet, net: str, feats: np.ndarray,
                hists: np.ndarray) -> Tuple[np.ndarray, Tape]:
    """Run one stack on a batch; returns the head output (B, n_out) and its tape."""
    arch = params.arch
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim == 2:
        feats = feats[None]
    hists = np.asarray(hists, dtype=np.float64).reshape(len(feats), -1)
    B, T, F = feats.shape
    if T != arch.window or F != arch.n_features or hists.shape[1] != arch.n_actions * arch.window:
        raise ValueError(f"observation shape ({T}x{F}, history {hists.shape[1]}) does not match "
                         f"window {arch.window} x {arch.n_features} features")
    p = params.tensors
    x = np.ascontiguousarray(feats.transpose(1, 0, 2)) * arch.input_scale
    lstm = kernels.lstm_forward(x, p[f"{net}.lstm.w_ih"], p[f"{net}.lstm.w_hh"], p[f"{net}.lstm.b"])
    h_last = lstm[0][T]
    z1 = h_last @ p[f"{net}.fc1.w"].T + p[f"{net}.fc1.b"]
    u = np.concatenate([np.maximum(z1, 0.0), hists], axis=1)
    z2 = u @ p[f"{net}.fc2.w"].T + p[f"{net}.fc2.b"]
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ p[f"{net}.fc3.w"].T + p[f"{net}.fc3.b"]
    a3 = np.maximum(z3, 0.0)
    out = a3 @ p[f"{net}.out.w"].T + p[f"{net}.out.b"]
    _check(out, f"{net} output")
    return out, Tape(params, net, x, hists, lstm, z1, u, z2, a2, z3, a3)


def backward(tape: Tape, seed: np.ndarray, grads: Optional[Gradients] = None) -> Gradients:
    """Accumulate d(loss)/d(params) into ``grads`` given ``seed`` = d(loss)/d(head output).

    ``seed`` has the head's shape: (B, 3) / (3,) for the actor, (B, 1) / (B,) / scalar
    for the critic. Only the tensors of ``tape.net`` are touched.
    """
    params, net = tape.params, tape.net
    if grads is None:
        grads = params.zeros_like()
    p, g = params.tensors, grads.tensors
    arch = params.arch
    dout = np.asarray(seed, dtype=np.float64).reshape(tape.batch, arch.head_size(net))
    g[f"{net}.out.w"] += dout.T @ tape.a3
    g[f"{net}.out.b"] += dout.sum(axis=0)
    dz3 = (dout @ p[f"{net}.out.w"]) * (tape.z3 > 0)
    g[f"{net}.fc3.w"] += dz3.T @ tape.a2
    g[f"{net}.fc3.b"] += dz3.sum(axis=0)
    dz2 = (dz3 @ p[f"{net}.fc3.w"]) * (tape.z2 > 0)
    g[f"{net}.fc2.w"] += dz2.T @ tape.u
    g[f"{net}.fc2.b"] += dz2.sum(axis=0)
    du = dz2 @ p[f"{net}.fc2.w"]
    dz1 = du[:, :arch.fc1] * (tape.z1 > 0)
    hs, cs, gates = tape.lstm
    g[f"{net}.fc1.w"] += dz1.T @ hs[-1]
    g[f"{net}.fc1.b"] += dz1.sum(axis=0)
    dh = np.ascontiguousarray(dz1 @ p[f"{net}.fc1.w"])
    dw_ih, dw_hh, db = kernels.lstm_backward(tape.x, p[f"{net}.lstm.w_ih"], p[f"{net}.lstm.w_hh"],
                                             hs, cs, gates, dh)
    g[f"{net}.lstm.w_ih"] += dw_ih
    g[f"{net}.lstm.w_hh"] += dw_hh
    g[f"{net}.lstm.b"] += db
    _check(grads.flat, f"{net} gradients")
    return grads


def forward_actor(params: ParameterSet, obs: Observation) -> Tuple[PolicyOutput, Tape]:
    logits, tape = forward_net(params, "actor", obs.features, obs.flat_history)
    return PolicyOutput.from_logits(logits[0]), tape


def forward_critic(params: ParameterSet, obs: Observation) -> Tuple[float, Tape]:
    value, tape = forward_net(params, "critic", obs.features, obs.flat_history)
    return float(value[0, 0]), tape


def actor_batch(params: ParameterSet, feats, hists) -> Tuple[PolicyOutput, Tape]:
    logits, tape = forward_net(params, "actor", feats, hists)
    return PolicyOutput.from_logits(logits), tape


def critic_batch(params: ParameterSet, feats, hists) -> Tuple[np.ndarray, Tape]:
    values, tape = forward_net(params, "critic", feats, hists)
    return values[:, 0], tape


def sample_action(policy: PolicyOutput, rng: np.random.Generator) -> Tuple[Action, float]:
    """Inverse-CDF categorical draw from one uniform variate."""
    u = rng.random()
    cdf = np.cumsum(policy.probs)
    k = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    k = min(k, len(cdf) - 1)
    return Action(k), float(policy.log_probs[k])


def greedy_action(policy: PolicyOutput) -> Action:
    # argmax returns the first maximal index, which fixes the tie rule
    return Action(int(np.argmax(policy.probs)))
