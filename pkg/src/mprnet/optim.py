"""Adam optimizer and cosine-annealed learning rate."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from .autograd.tensor import Parameter
from .errors import UsageError
from .models.config import OptimConfig

logger = logging.getLogger(__name__)


def cosine_lr(t: int, cfg: OptimConfig) -> float:
    """Learning rate at step ``t`` of ``cfg.total_iters``, from lr_init down to lr_final."""
    total = cfg.total_iters
    if total is None:
        raise UsageError("cosine_lr: total_iters is not set")
    if not 0 <= t <= total:
        raise UsageError(f"cosine_lr: t={t} outside [0, {total}]")
    weight = 0.5 * (1.0 + math.cos(math.pi * t / total))
    # convex combination: both endpoints come out exactly
    return weight * cfg.lr_init + (1.0 - weight) * cfg.lr_final


@dataclass
class AdamState:
    """First/second moments keyed by parameter name, plus the shared step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float, cfg: OptimConfig) -> AdamState:
    """One bias-corrected Adam update of ``params`` from their accumulated ``grad``."""
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise UsageError(f"adam_step: no gradient for {missing}")

    state.t += 1
    correction1 = 1.0 - cfg.beta1 ** state.t
    correction2 = 1.0 - cfg.beta2 ** state.t
    for index, p in enumerate(params):
        key = p.name or str(index)
        g = p.grad.astype(np.float64)  # type: ignore[union-attr]
        m = state.m.get(key)
        v = state.v.get(key)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        state.m[key], state.v[key] = m, v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        p.assign(p.data - update)
    return state


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params: Sequence[Parameter], cfg: OptimConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        # parameters outside the supervised graph keep their values
        active = [p for p in self.params if p.grad is not None]
        adam_step(active, self.state, lr, self.cfg)
