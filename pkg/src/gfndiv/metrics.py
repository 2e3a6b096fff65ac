"""Evaluation: terminal marginals p_T, L1 distance to the target, and JSD."""

from __future__ import annotations

import math
import weakref
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .envs import DEFAULT_ENUM_CAP, SF, DiscreteEnv
from .errors import CapExceededError, UsageError
from .sampler import all_backward_actions, backward_batch, rollout

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class MetricRecord:
    step: int
    metric: str
    value: float
    seed: int


_targets: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def target_distribution(env: DiscreteEnv, cap: float = DEFAULT_ENUM_CAP) -> tuple[list, np.ndarray]:
    """Terminals and their normalised target probabilities r(x)/Z (cached per env)."""
    hit = _targets.get(env)
    if hit is not None:
        return hit
    xs = env.enumerate_terminals(cap)
    log_r = np.array([env.log_reward(x) for x in xs])
    p = np.exp(log_r - log_r.max())
    out = (xs, p / p.sum())
    _targets[env] = out
    return out


def terminal_distribution(env: DiscreteEnv, policy, cap: float = DEFAULT_ENUM_CAP, chunk: int = 8192) -> dict:
    """Exact p_T by pushing probability mass forward through the DAG level by level."""
    if env.count_terminals() > cap:
        raise CapExceededError(env.count_terminals(), cap)
    out: dict = defaultdict(float)
    level = {env.initial_state(): 1.0}
    while level:
        nxt: dict = defaultdict(float)
        states = list(level)
        for lo in range(0, len(states), chunk):
            part = states[lo : lo + chunk]
            mask = env.action_mask(part)
            multi = np.flatnonzero(mask.sum(axis=1) > 1)
            probs = mask.astype(np.float64)
            if len(multi):
                lp = policy.log_probs([part[i] for i in multi], mask[multi]).value
                probs[multi] = np.exp(lp)
            for s, row, m in zip(part, probs, mask):
                mass = level[s]
                for a in np.flatnonzero(m):
                    q = mass * row[a]
                    if a == env.terminate:
                        out[s] += q
                    else:
                        nxt[env.apply_action(s, int(a))] += q
        level = nxt
    return dict(out)


def estimate_pT(env, policy, x, K: int = 64, rng=None, exact: bool = False) -> float:
    """p_T(x) = E_{tau ~ P_B(x, .)}[p_F(tau) / p_B(tau | x)].

    ``exact`` sums p_F over every backward trajectory instead of sampling K.
    """
    if x is SF or not env.is_terminal(x):
        raise UsageError(f"p_T needs a terminal state, got {x!r}")
    if exact:
        acts = [a for a, _ in all_backward_actions(env, x)]
        return float(np.exp(rollout(env, policy, actions=acts).log_pf.value).sum())
    if K < 1:
        raise UsageError("K must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    rngs = [np.random.default_rng(s) for s in rng.integers(0, 2**63 - 1, size=K)]
    batch = backward_batch(env, policy, [x] * K, rngs)
    return float(np.mean(np.exp(batch.log_pf.value - batch.log_pb)))


def l1_distance(env, policy, mode: str = "exact", K: int = 64, rng=None, cap: float = DEFAULT_ENUM_CAP) -> float:
    """sum_x |p_T(x) - r(x)/Z| over every terminal state."""
    xs, target = target_distribution(env, cap)
    if mode == "exact":
        pt = terminal_distribution(env, policy, cap)
        est = np.array([pt.get(x, 0.0) for x in xs])
    elif mode == "mc":
        rng = rng if rng is not None else np.random.default_rng(0)
        est = np.array([estimate_pT(env, policy, x, K, rng) for x in xs])
    else:
        raise UsageError(f"unknown p_T mode {mode!r}")
    return float(np.abs(est - target).sum())


def jsd_estimate(env, policy, n: int = 4096, rng=None) -> tuple[float, float]:
    """Monte Carlo Jensen-Shannon divergence between p_T and the target, with its standard error.

    ``policy`` needs ``sample(n, rng)`` and ``log_pt(xs)``; the target density
    must be normalised.
    """
    rng = rng if rng is not None else np.random.default_rng(0)

    def half(xs, own_is_policy):
        lp = policy.log_pt(xs)
        lr = env.log_density(xs)
        lm = np.logaddexp(lp, lr) - LOG2
        return (lp if own_is_policy else lr) - lm

    a = half(policy.sample(n, rng), True)
    b = half(env.sample_target(n, rng), False)
    value = 0.5 * (a.mean() + b.mean())
    se = 0.5 * math.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
    return float(value), float(se)


def jsd_continuous(env, policy, n: int = 4096, rng=None) -> float:
    return jsd_estimate(env, policy, n, rng)[0]
