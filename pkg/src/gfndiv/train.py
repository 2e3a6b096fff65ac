"""Seeded training loop: sample, estimate, Adam step, evaluate on a cadence."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore
from .envs import ContinuousEnv
from .metrics import MetricRecord, jsd_continuous, l1_distance
from .objectives import DivergenceSpec, RewardShift, estimate
from .optim import Adam, LrSchedule
from .policies import make_policy
from .sampler import sample_forward

# stream ids keep calibration, training and evaluation draws independent
CALIBRATION, TRAINING, EVALUATION = 0, 1, 2


@dataclass
class TrainSettings:
    steps: int = 512
    batch: int = 128
    lr: float = 1e-3
    lr_log_z: float = 1e-1
    power: float = 1.0
    metric_every: int = 16
    pt_mode: str = "exact"
    K: int = 64
    jsd_samples: int = 4096
    arch: str | None = None
    hidden: int = 64


@dataclass
class TrainResult:
    store: ParamStore
    policy: object
    records: list = field(default_factory=list)
    shift: RewardShift = field(default_factory=RewardShift)
    skipped: int = 0

    def series(self, metric: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [(r.step, r.value) for r in self.records if r.metric == metric]
        steps, values = zip(*rows) if rows else ((), ())
        return np.asarray(steps), np.asarray(values)


def evaluate(env, policy, settings: TrainSettings, seed: int, step: int) -> dict:
    rng = np.random.default_rng([seed, EVALUATION, step])
    if isinstance(env, ContinuousEnv):
        return {"jsd": jsd_continuous(env, policy, settings.jsd_samples, rng)}
    return {"l1": l1_distance(env, policy, settings.pt_mode, settings.K, rng)}


def train(env, spec: DivergenceSpec, settings: TrainSettings, seed: int, evaluate_fn=evaluate) -> TrainResult:
    """Train a fresh policy; metrics at steps 0, c, 2c, ... and after the last step."""
    store = ParamStore(seed)
    policy = make_policy(env, store, settings.arch, settings.hidden)
    calib = sample_forward(env, policy, settings.batch, seed, step=0, stream=CALIBRATION)
    shift = RewardShift.calibrate(calib.log_reward)
    opt = Adam(LrSchedule(settings.steps, settings.lr, settings.lr_log_z, settings.power))
    result = TrainResult(store, policy, [], shift)
    recent: list[float] = []

    def record(step):
        values = evaluate_fn(env, policy, settings, seed, step) if evaluate_fn else {}
        if recent:
            values["objective"] = float(np.mean(recent))
            recent.clear()
        if spec.kind == "tb":
            values["log_z"] = float(store.log_z.value)
        values["skipped_steps"] = float(opt.skipped)
        for name, value in values.items():
            result.records.append(MetricRecord(step, name, float(value), seed))

    for step in range(settings.steps):
        if settings.metric_every and step % settings.metric_every == 0:
            record(step)
        batch = sample_forward(env, policy, settings.batch, seed, step=step, stream=TRAINING)
        out = estimate(batch, store, spec, shift)
        if math.isfinite(out.value):
            recent.append(out.value)
        opt.step(store, out.grads)
    record(settings.steps)
    result.skipped = opt.skipped
    return result
