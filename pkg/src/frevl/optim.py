"""AdamW with decoupled weight decay, warmup+cosine schedule, global clipping.

Decay applies only to 2-D weight matrices; biases and LayerNorm parameters
are excluded (standard decoupled-decay convention). Clipping runs over the
joint L2 norm of the full gradient set and refuses to mask non-finite
gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericFault, ScheduleExhaustedError, ShapeError


@dataclass(frozen=True)
class ScheduleConfig:
    peak_lr: float
    warmup_steps: int
    total_steps: int
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError(
                f"need 0 < warmup_steps < total_steps, got "
                f"{self.warmup_steps}/{self.total_steps}")


@dataclass
class AdamWState:
    step: int
    m: dict
    v: dict
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def init_adamw(params: dict, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.01) -> AdamWState:
    return AdamWState(
        step=0,
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)


def lr_at_step(step: int, cfg: ScheduleConfig) -> float:
    if step < 0:
        raise ValueError("step must be nonnegative")
    if step > cfg.total_steps:
        raise ScheduleExhaustedError(
            f"step {step} past schedule end {cfg.total_steps}")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    frac = (step - cfg.warmup_steps) / span
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (
        1.0 + math.cos(math.pi * frac))


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g.astype(np.float64))))
    return math.sqrt(total)


def clip_global_norm(grads: dict, max_norm: float = 1.0):
    """Scale the whole gradient set if its joint L2 norm exceeds max_norm.
    Returns (clipped grads, observed norm)."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFault(f"non-finite gradient in {k}")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def _decayed(name: str, arr: np.ndarray) -> bool:
    return arr.ndim >= 2


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float):
    """One AdamW update. Functional: returns (new params, new state)."""
    if set(params) != set(grads):
        raise ShapeError("params and grads have different key sets")
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for k, theta in params.items():
        g = grads[k]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient shape mismatch for {k}: "
                             f"{g.shape} vs {theta.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        update = mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay > 0 and _decayed(k, theta):
            update = update + state.weight_decay * theta
        new_params[k] = theta - lr * update
        new_m[k] = m
        new_v[k] = v
    new_state = AdamWState(step=t, m=new_m, v=new_v, beta1=b1, beta2=b2,
                           eps=state.eps, weight_decay=state.weight_decay)
    return new_params, new_state
