"""Adam with a separate learning rate for log Z and polynomial annealing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import LOG_Z, ParamStore
from .errors import ConfigurationError


@dataclass(frozen=True)
class LrSchedule:
    total_steps: int
    lr: float = 1e-3
    lr_log_z: float = 1e-1
    power: float = 1.0

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ConfigurationError("total_steps must be positive")


def lr_factor(schedule: LrSchedule, step: int) -> float:
    """``(1 - step / T) ** p``, clamped to 0 past T."""
    frac = min(max(step, 0) / schedule.total_steps, 1.0)
    return (1.0 - frac) ** schedule.power


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped: int = 0


def adam_step(store: ParamStore, grads: dict, state: AdamState, schedule: LrSchedule) -> bool:
    """One bias-corrected Adam update; returns False (and counts it) on non-finite gradients.

    The schedule is evaluated at the number of steps taken so far, so the
    first update uses the full rate.
    """
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        return False
    factor = lr_factor(schedule, state.step)
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if name not in store.blocks:
            continue
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        lr = schedule.lr_log_z if name == LOG_Z else schedule.lr
        node = store.blocks[name]
        node.value = node.value - lr * factor * m_hat / (np.sqrt(v_hat) + state.eps)
    return True


class Adam:
    """Convenience wrapper bundling state and schedule."""

    def __init__(self, schedule: LrSchedule, **kw):
        self.schedule = schedule
        self.state = AdamState(**kw)

    def step(self, store: ParamStore, grads: dict) -> bool:
        return adam_step(store, grads, self.state, self.schedule)

    @property
    def skipped(self) -> int:
        return self.state.skipped
