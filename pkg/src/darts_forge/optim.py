"""SGD / Adam for the two parameter groups, plus the plateau LR schedule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    alpha_lr: float = 1e-4
    alpha_betas: tuple = (0.5, 0.999)
    alpha_weight_decay: float = 1e-3
    weight_lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 3e-4
    plateau_factor: float = 0.2
    plateau_patience: int = 3
    clip_norm: Optional[float] = 5.0

    def __post_init__(self):
        object.__setattr__(self, "alpha_betas", tuple(self.alpha_betas))
        if self.alpha_lr <= 0 or self.weight_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.alpha_weight_decay < 0 or self.weight_decay < 0:
            raise ValueError("weight decays must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_betas"] = list(self.alpha_betas)
        return d


class SGD:
    """Momentum SGD with decoupled multiplicative weight decay.

    ``w <- w * (1 - lr * decay) - lr * v`` with ``v <- momentum * v + g``.
    Parameters without a gradient are skipped entirely.
    """

    def __init__(self, params: Sequence, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {}

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            v = self._velocity.get(id(p))
            v = p.grad.copy() if v is None else self.momentum * v + p.grad
            self._velocity[id(p)] = v
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    """Bias-corrected Adam with L2 decay added to the gradient.

    ``masks`` (optional, one boolean array per parameter) freezes entries:
    masked-out entries receive neither gradient steps nor decay.
    """

    def __init__(self, params: Sequence, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, masks: Optional[Sequence] = None):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.masks = list(masks) if masks is not None else [None] * len(self.params)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v, mask in zip(self.params, self._m, self._v, self.masks):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            if mask is not None:
                g = np.where(mask, g, 0.0)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if mask is not None:
                upd = np.where(mask, upd, 0.0)
            p.data -= upd

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class PlateauSchedule:
    """Multiply learning rates by ``factor`` after ``patience`` epochs without strict improvement.

    The reduction happens on the epoch where the count of consecutive
    non-improving epochs first exceeds ``patience``; the count then resets.
    """

    def __init__(self, factor: float = 0.2, patience: int = 3):
        if not 0 < factor < 1:
            raise ValueError("factor must be in (0, 1)")
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0
        self.reductions = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; returns True when learning rates should be reduced."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.bad_epochs = 0
            self.reductions += 1
            return True
        return False


def plateau_update(sched: PlateauSchedule, val_loss: float, optimizers: Sequence = ()) -> bool:
    reduced = sched.update(val_loss)
    if reduced:
        for opt in optimizers:
            opt.lr *= sched.factor
    return reduced
