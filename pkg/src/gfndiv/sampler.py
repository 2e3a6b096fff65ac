"""Forward and backward trajectory sampling.

Trajectories of a batch are rolled out in lockstep so that each step costs
one policy evaluation.  Every trajectory owns its random stream, seeded
from ``(seed, stream, step, index)``, which makes a batch reproducible and
independent of batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Node
from .envs import SF, ContinuousEnv, DiscreteEnv
from .errors import CapExceededError, UsageError


def trajectory_rngs(seed: int, stream: int, step: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, stream, step, i]) for i in range(n)]


@dataclass
class Trajectory:
    """One trajectory with its per-step forward log-probabilities as floats."""

    states: list
    actions: list
    log_pf_steps: np.ndarray
    log_pb: float
    log_reward: float

    @property
    def terminal(self):
        return self.states[-2]

    @property
    def log_pf(self) -> float:
        return float(self.log_pf_steps.sum())


@dataclass
class Batch:
    """Trajectories plus the differentiable batch vector of log p_F(tau)."""

    states: list
    actions: list
    log_pf: Node
    log_pf_steps: np.ndarray
    log_pb: np.ndarray
    log_reward: np.ndarray
    terminals: list = field(default_factory=list)

    def __len__(self):
        return len(self.states)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            self.states[i],
            self.actions[i],
            self.log_pf_steps[i],
            float(self.log_pb[i]),
            float(self.log_reward[i]),
        )


def categorical(log_probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from one row of log-probabilities."""
    p = np.exp(log_probs)
    cdf = np.cumsum(p)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    if k >= len(p) or p[k] == 0.0:
        k = int(np.flatnonzero(p)[-1])
    return k


def rollout(env, policy, rngs=None, actions=None) -> Batch:
    """Roll out one trajectory per generator in ``rngs``.

    With ``actions`` given (one action list per trajectory) the moves are
    forced instead of sampled, which scores fixed trajectories under the
    current policy.
    """
    if isinstance(env, ContinuousEnv):
        return _rollout_continuous(env, policy, rngs, actions)
    if actions is None and rngs is None:
        raise UsageError("rollout needs random generators or forced actions")
    n = len(actions) if actions is not None else len(rngs)
    states = [env.initial_state()] * n
    paths = [[s] for s in states]
    taken = [[] for _ in range(n)]
    step_values = np.zeros((n, env.max_steps))
    log_pb = np.zeros(n)
    pieces = []
    for t in range(env.max_steps):
        active = np.array([i for i in range(n) if states[i] is not SF], dtype=np.int64)
        if len(active) == 0:
            break
        act_states = [states[i] for i in active]
        mask = env.action_mask(act_states)
        multi = mask.sum(axis=1) > 1
        chosen = np.where(multi, -1, mask.argmax(axis=1))
        if actions is not None:
            chosen = np.array([actions[i][t] for i in active], dtype=np.int64)
            if np.any(~mask[np.arange(len(active)), chosen]):
                raise UsageError("forced action is not legal")
        if multi.any():
            rows = np.flatnonzero(multi)
            lp = policy.log_probs([act_states[r] for r in rows], mask[rows])
            if actions is None:
                for k, r in enumerate(rows):
                    chosen[r] = categorical(lp.value[k], rngs[active[r]])
            picked = ad.gather(lp, chosen[rows])
            step_values[active[rows], t] = picked.value
            pieces.append(ad.scatter(picked, active[rows], n))
        for k, i in enumerate(active):
            a = int(chosen[k])
            nxt = env.apply_action(states[i], a)
            if nxt is not SF:
                log_pb[i] -= np.log(env.n_parents(nxt))
            states[i] = nxt
            paths[i].append(nxt)
            taken[i].append(a)
    if any(s is not SF for s in states):
        raise UsageError("rollout did not reach the final state within max_steps")
    log_pf = _sum_nodes(pieces, n)
    terminals = [p[-2] for p in paths]
    log_reward = np.array([env.log_reward(x) for x in terminals])
    return Batch(paths, taken, log_pf, step_values, log_pb, log_reward, terminals)


def _sum_nodes(pieces, n) -> Node:
    if not pieces:
        return Node(np.zeros(n))
    total = pieces[0]
    for p in pieces[1:]:
        total = total + p
    return total


def continuous_log_pf(env: ContinuousEnv, policy, xs) -> Node:
    """Differentiable log p_F of the unique trajectories ending at rows of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    total = None
    for t in range(env.d):
        prefixes = [tuple(row[:t]) for row in xs]
        lp = nets.mixture_log_density(policy.head(prefixes), xs[:, t])
        total = lp if total is None else total + lp
    return total


def _rollout_continuous(env, policy, rngs, actions) -> Batch:
    if actions is not None:
        xs = np.asarray([[a for a in acts if a != "terminate"] for acts in actions], dtype=np.float64)
        log_pf = continuous_log_pf(env, policy, xs)
        steps = np.zeros((len(xs), env.max_steps))
    else:
        n = len(rngs)
        xs = np.zeros((n, env.d))
        steps = np.zeros((n, env.max_steps))
        for t in range(env.d):
            prefixes = [tuple(row[:t]) for row in xs]
            values, lp = nets.mixture_sample(policy.head(prefixes).value, rngs)
            xs[:, t] = values
            steps[:, t] = lp
        log_pf = continuous_log_pf(env, policy, xs)
    n = len(xs)
    terminals = [tuple(float(v) for v in row) for row in xs]
    paths = [[tuple(x[:t]) for t in range(env.d + 1)] + [SF] for x in terminals]
    taken = [list(x) + ["terminate"] for x in terminals]
    if actions is not None:
        steps[:, : env.d] = _per_step(env, policy, xs)
    return Batch(paths, taken, log_pf, steps, np.zeros(n), env.log_density(xs), terminals)


def _per_step(env, policy, xs) -> np.ndarray:
    out = np.zeros((len(xs), env.d))
    for t in range(env.d):
        prefixes = [tuple(row[:t]) for row in xs]
        out[:, t] = nets.mixture_log_density(policy.head(prefixes).value, xs[:, t]).value
    return out


def sample_forward(env, policy, n: int, seed: int, step: int = 0, stream: int = 0) -> Batch:
    """A batch of ``n`` on-policy trajectories with reproducible streams."""
    return rollout(env, policy, trajectory_rngs(seed, stream, step, n))


def backward_actions(env: DiscreteEnv, x, rng: np.random.Generator) -> tuple[list, float]:
    """Walk from ``x`` to the initial state under the uniform backward policy.

    Returns the forward action list (terminate included) and log p_B(tau | x).
    """
    if x is SF or not env.is_terminal(x):
        raise UsageError(f"backward sampling needs a terminal state, got {x!r}")
    acts, log_pb = [env.terminate], 0.0
    s = x
    while s != env.initial_state():
        parents = env.backward_parents(s)
        parent, a = parents[int(rng.integers(len(parents)))]
        log_pb -= np.log(len(parents))
        acts.append(a)
        s = parent
    return acts[::-1], log_pb


def sample_backward(env, policy, x, rng: np.random.Generator) -> Trajectory:
    """A trajectory drawn backward from ``x`` under p_B and scored under p_F."""
    if isinstance(env, ContinuousEnv):
        if not env.is_terminal(x):
            raise UsageError(f"backward sampling needs a terminal state, got {x!r}")
        return rollout(env, policy, actions=[list(x) + ["terminate"]]).trajectory(0)
    acts, _ = backward_actions(env, x, rng)
    return rollout(env, policy, actions=[acts]).trajectory(0)


def backward_batch(env, policy, xs, rngs) -> Batch:
    """One backward-sampled trajectory per terminal in ``xs``."""
    acts = [backward_actions(env, x, rng)[0] for x, rng in zip(xs, rngs)]
    return rollout(env, policy, actions=acts)


def all_backward_actions(env: DiscreteEnv, x) -> list[tuple[list, float]]:
    """Every backward trajectory from ``x`` with its log p_B (exhaustive)."""
    if x is SF or not env.is_terminal(x):
        raise UsageError(f"backward enumeration needs a terminal state, got {x!r}")
    out = []

    def walk(s, acts, lp):
        if s == env.initial_state():
            out.append(([a for a in reversed(acts)] + [env.terminate], lp))
            return
        parents = env.backward_parents(s)
        for parent, a in parents:
            walk(parent, acts + [a], lp - np.log(len(parents)))

    walk(x, [], 0.0)
    return out


def all_trajectories(env: DiscreteEnv, cap: float = 2e6) -> list[list]:
    """Every complete forward action sequence (tiny environments only)."""
    out = []

    def walk(s, acts):
        if len(out) > cap:
            raise CapExceededError(len(out), cap)
        for a in env.legal_actions(s):
            if a == env.terminate:
                out.append(acts + [a])
            else:
                walk(env.apply_action(s, a), acts + [a])

    walk(env.initial_state(), [])
    return out
