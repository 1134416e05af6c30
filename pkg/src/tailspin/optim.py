"""SGD and Adam steps, learning-rate scaling, and the warmup + cosine schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ValidationError
from .tensor import Tensor

OPTIMIZER_KINDS = ("sgd", "adam")
SCHEDULE_KINDS = ("cosine", "constant")


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    base_lr: float = 0.03
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer kind must be one of {OPTIMIZER_KINDS}, got '{self.kind}'")
        if self.base_lr <= 0:
            raise ValidationError(f"base_lr must be positive, got {self.base_lr}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class ScheduleConfig:
    kind: str = "cosine"
    warmup_epochs: int = 10
    total_epochs: int = 200

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule kind must be one of {SCHEDULE_KINDS}, got '{self.kind}'")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValidationError(
                f"warmup_epochs ({self.warmup_epochs}) must be < total_epochs ({self.total_epochs})"
            )


def scaled_lr(base_lr: float, batch_size: int) -> float:
    """Linear scaling rule: base_lr * batch_size / 256."""
    if base_lr <= 0 or batch_size <= 0:
        raise ValidationError("scaled_lr needs positive inputs")
    return base_lr * batch_size / 256.0


def lr_at(schedule: ScheduleConfig, epoch: int, effective_lr: float) -> float:
    """Linear warmup to effective_lr, then cosine decay toward zero."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    if schedule.warmup_epochs > 0 and epoch < schedule.warmup_epochs:
        return effective_lr * (epoch + 1) / schedule.warmup_epochs
    if schedule.kind == "constant":
        return effective_lr
    span = schedule.total_epochs - schedule.warmup_epochs
    progress = (epoch - schedule.warmup_epochs) / span
    return effective_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def _checked_grad(p: Tensor) -> np.ndarray:
    g = p.grad
    if not np.all(np.isfinite(g)):
        raise NumericError("optimizer step: gradient contains NaN or Inf, aborting run")
    return g


class Sgd:
    """v <- momentum * v + (g + wd * theta); theta <- theta - lr * v."""

    def __init__(self, params: list[Tensor], momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            g = _checked_grad(p)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Adam:
    """Bias-corrected Adam; weight decay is coupled (added to the gradient)."""

    def __init__(
        self,
        params: list[Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = _checked_grad(p)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def make_optimizer(cfg: OptimizerConfig, params: list[Tensor]):
    if cfg.kind == "sgd":
        return Sgd(params, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    return Adam(params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay)
