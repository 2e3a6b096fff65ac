"""Shared test fixtures that need more than a one-liner."""

from __future__ import annotations

import numpy as np

from gfndiv import autodiff as ad
from gfndiv.autodiff import ParamStore
from gfndiv.envs import SF
from gfndiv.objectives import RewardShift, perfect_policy_oracle
from gfndiv.policies import DiscretePolicy


def all_states(env):
    seen, frontier = [env.initial_state()], [env.initial_state()]
    known = {env.initial_state()}
    while frontier:
        s = frontier.pop()
        for a in env.legal_actions(s):
            c = env.apply_action(s, a)
            if c is not SF and c not in known:
                known.add(c)
                seen.append(c)
                frontier.append(c)
    return seen


class TabularPolicy(DiscretePolicy):
    """One free logit per (state, action): every forward policy is representable."""

    def __init__(self, env, store: ParamStore, init=None):
        super().__init__(env, store)
        self.index = {s: i for i, s in enumerate(all_states(env))}
        shape = (len(self.index), env.n_actions)
        self.table = store.param("table", shape, init=init or "glorot")

    def logits(self, states):
        return ad.take(self.table, [self.index[s] for s in states])


def perfect_tabular(env, shift=None, seed=0):
    """Tabular policy whose logits equal the exactly balanced log-probabilities."""
    shift = shift or RewardShift()
    oracle = perfect_policy_oracle(env, shift)
    store = ParamStore(seed)
    policy = TabularPolicy(env, store)
    values = np.zeros(policy.table.shape)
    for s, i in policy.index.items():
        row = oracle.policy.table[s]
        values[i] = np.where(np.isfinite(row), row, 0.0)
    policy.table.value = values
    return store, policy, oracle


def random_tabular(env, seed=0, scale=1.0):
    store = ParamStore(seed)
    policy = TabularPolicy(env, store, init=lambda rng, shape: scale * rng.standard_normal(shape))
    return store, policy
