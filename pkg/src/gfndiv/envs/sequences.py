"""Autoregressive sequence generation with an end-of-sequence token."""

from __future__ import annotations

from itertools import product

import numpy as np

from ..errors import ConfigurationError, UsageError
from .base import SF, DiscreteEnv


class SeqEnv(DiscreteEnv):
    """Sequences over ``range(D)`` of length at most N, closed by ``END = D``.

    ``log r(x) = sum_i g[i] * f[x_i]`` over the non-END tokens (0-indexed
    positions here).  Actions: tokens ``0..D-1``, ``END`` and terminate.
    """

    kind = "seq"

    def __init__(self, D: int, N: int, f, g):
        f = np.asarray(f, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if D < 1 or N < 1:
            raise ConfigurationError(f"seq env needs D, N >= 1, got D={D}, N={N}")
        if f.shape != (D,) or g.shape != (N,):
            raise ConfigurationError(f"expected f of length {D} and g of length {N}")
        self.D, self.N, self.f, self.g = D, N, f, g
        self.END = D
        self.PAD = D + 1
        self.n_actions = D + 2
        self.max_steps = N + 2

    def initial_state(self):
        return ()

    def ended(self, s) -> bool:
        return len(s) > 0 and s[-1] == self.END

    def is_terminal(self, s) -> bool:
        return s is not SF and self.ended(s)

    def legal_actions(self, s):
        if self.ended(s):
            return [self.terminate]
        if len(s) == self.N:
            return [self.END]
        return list(range(self.D + 1))

    def _child(self, s, a):
        return s + (a,)

    def backward_parents(self, s):
        if s is SF or len(s) == 0:
            raise UsageError("the empty sequence has no parents")
        return [(s[:-1], s[-1])]

    def n_parents(self, s) -> int:
        return 1

    def _log_reward(self, x) -> float:
        return float(sum(self.g[i] * self.f[t] for i, t in enumerate(x) if t != self.END))

    def action_mask(self, states) -> np.ndarray:
        mask = np.zeros((len(states), self.n_actions), dtype=bool)
        for i, s in enumerate(states):
            if self.ended(s):
                mask[i, self.terminate] = True
            elif len(s) == self.N:
                mask[i, self.END] = True
            else:
                mask[i, : self.D + 1] = True
        return mask

    @property
    def encoding_dim(self) -> int:
        return (self.N + 1) * (self.D + 2)

    def encode(self, states) -> np.ndarray:
        """Padded one-hot: N+1 slots, each over the D tokens, END and PAD."""
        width = self.D + 2
        out = np.zeros((len(states), self.N + 1, width))
        for i, s in enumerate(states):
            out[i, np.arange(len(s)), list(s)] = 1.0
            out[i, len(s) :, self.PAD] = 1.0
        return out.reshape(len(states), -1)

    def count_terminals(self) -> float:
        return sum(self.D**n for n in range(self.N + 1))

    def iter_terminals(self):
        for n in range(self.N + 1):
            for body in product(range(self.D), repeat=n):
                yield body + (self.END,)

    def manifest(self) -> dict:
        return {"kind": self.kind, "D": self.D, "N": self.N, "f": self.f.tolist(), "g": self.g.tolist()}
