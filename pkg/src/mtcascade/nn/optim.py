"""Adam updates and the warmup-cosine learning rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup to peak_lr, cosine decay to floor_lr, flat after total_steps."""

    warmup_steps: int = 30_000
    peak_lr: float = 5e-4
    total_steps: int = 200_000
    floor_lr: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.floor_lr <= self.peak_lr):
            raise ValueError(f"floor_lr must be in [0, peak_lr], got {self.floor_lr}")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps exceeds total_steps")


def lr_at(step, cfg: ScheduleConfig) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    if step >= cfg.total_steps:
        return cfg.floor_lr
    span = cfg.total_steps - cfg.warmup_steps
    if span == 0:
        return cfg.floor_lr
    progress = (step - cfg.warmup_steps) / span
    return cfg.floor_lr + 0.5 * (cfg.peak_lr - cfg.floor_lr) * (1.0 + math.cos(math.pi * progress))


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """Bias-corrected Adam update applied in place; gradients are zeroed after.

    Parameters whose gradient is unset this step (e.g. a branch not taken)
    still decay their moments, matching a zero gradient.
    """
    if t < 1:
        raise ValueError("Adam step index t must be >= 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        state = store.opt_state.get(name)
        if state is None:
            state = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            store.opt_state[name] = state
        state["m"] = beta1 * state["m"] + (1.0 - beta1) * g
        state["v"] = beta2 * state["v"] + (1.0 - beta2) * (g * g)
        m_hat = state["m"] / bc1
        v_hat = state["v"] / bc2
        p.data = p.data - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    store.zero_grads()
