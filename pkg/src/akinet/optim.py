"""Training hyperparameters and the Adam optimizer."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigError(f"epochs must be a nonnegative integer, got {self.epochs}")
        if not 0 < self.adam_beta1 < 1 or not 0 < self.adam_beta2 < 1:
            raise ConfigError("Adam betas must lie strictly between 0 and 1")
        if not self.adam_epsilon > 0:
            raise ConfigError("adam_epsilon must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Bias-corrected Adam.

    State is kept per position in the parameter list, so ``step`` must always
    be called with the parameters in the same order.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    @classmethod
    def from_hyperparams(cls, h: Hyperparams) -> "Adam":
        return cls(h.learning_rate, h.adam_beta1, h.adam_beta2, h.adam_epsilon)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update every array in ``params`` in place."""
        if len(params) != len(grads):
            raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise DimensionError(f"parameter shape {p.shape} vs gradient shape {g.shape}")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, opt: Adam) -> list[np.ndarray]:
    opt.step(params, grads)
    return params
