"""Adam with L2 weight decay folded into the gradient, and a cosine schedule."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class LRMode(str, enum.Enum):
    FIXED = "fixed"
    COSINE = "cosine"


def cosine_lr(t: int, total: int, lr0: float) -> float:
    if total < 1:
        raise ValueError("total steps must be >= 1")
    t = min(max(t, 0), total)
    return lr0 * (1.0 + math.cos(math.pi * t / total)) / 2.0


def scheduled_lr(mode: LRMode | str, t: int, total: int, lr0: float) -> float:
    if LRMode(mode) is LRMode.FIXED:
        return lr0
    return cosine_lr(t, total, lr0)


class TrainingFault(RuntimeError):
    """Non-finite values reached the optimiser or the loss."""


@dataclass
class AdamState:
    base_lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """Update ``params`` in place and advance ``state``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingFault(f"non-finite gradient at optimiser step {state.t + 1}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
