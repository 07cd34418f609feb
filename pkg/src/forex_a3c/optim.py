"""Adam on flat parameter buffers, plus global-norm gradient clipping."""
from dataclasses import dataclass

import numpy as np

from .neural import kernels


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: np.ndarray, grads: np.ndarray, m: np.ndarray, v: np.ndarray,
              step: int, cfg: AdamConfig, kernel=None) -> None:
    """Apply Adam step number ``step`` (1-based) in place on flat buffers."""
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    (kernel or kernels.adam_update)(params, grads, m, v, cfg.lr, cfg.beta1, cfg.beta2,
                                    cfg.eps, bc1, bc2)


def clip_grad_norm(grads: np.ndarray, max_norm: float) -> float:
    """Rescale ``grads`` in place so its L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(np.dot(grads, grads)))
    if max_norm and norm > max_norm:
        grads *= max_norm / norm
    return norm


class Adam:
    """Private (unshared) Adam state for single-process training."""

    def __init__(self, size: int, cfg: AdamConfig):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.steps = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        self.steps += 1
        adam_step(params, grads, self.m, self.v, self.steps, self.cfg)
