"""Set generation: add one element of a deposit at a time until |s| = N."""

from __future__ import annotations

from itertools import combinations
from math import comb

import numpy as np

from ..errors import ConfigurationError, UsageError
from .base import SF, DiscreteEnv


class SetEnv(DiscreteEnv):
    """States are sorted tuples of distinct elements of ``range(D)``.

    ``log r(x) = sum(f[d] for d in x)``.  Action ``d < D`` adds element ``d``;
    action ``D`` terminates a full set.
    """

    kind = "set"

    def __init__(self, D: int, N: int, f):
        f = np.asarray(f, dtype=np.float64)
        if N < 1 or D < N:
            raise ConfigurationError(f"set env needs D >= N >= 1, got D={D}, N={N}")
        if f.shape != (D,):
            raise ConfigurationError(f"f table must have length D={D}, got {f.shape}")
        self.D, self.N, self.f = D, N, f
        self.n_actions = D + 1
        self.max_steps = N + 1

    def initial_state(self):
        return ()

    def is_terminal(self, s) -> bool:
        return s is not SF and len(s) == self.N

    def legal_actions(self, s):
        if len(s) == self.N:
            return [self.D]
        taken = set(s)
        return [d for d in range(self.D) if d not in taken]

    def _child(self, s, a):
        return tuple(sorted(s + (a,)))

    def backward_parents(self, s):
        if s is SF or len(s) == 0:
            raise UsageError("the empty set has no parents")
        return [(tuple(e for e in s if e != d), d) for d in s]

    def n_parents(self, s) -> int:
        return len(s)

    def _log_reward(self, x) -> float:
        return float(self.f[list(x)].sum())

    def action_mask(self, states) -> np.ndarray:
        mask = np.zeros((len(states), self.n_actions), dtype=bool)
        for i, s in enumerate(states):
            if len(s) == self.N:
                mask[i, self.D] = True
            else:
                mask[i, : self.D] = True
                mask[i, list(s)] = False
        return mask

    def encode(self, states) -> np.ndarray:
        """Multi-hot membership, shape (B, D)."""
        out = np.zeros((len(states), self.D))
        for i, s in enumerate(states):
            out[i, list(s)] = 1.0
        return out

    def count_terminals(self) -> float:
        return comb(self.D, self.N)

    def iter_terminals(self):
        return combinations(range(self.D), self.N)

    def manifest(self) -> dict:
        return {"kind": self.kind, "D": self.D, "N": self.N, "f": self.f.tolist()}
