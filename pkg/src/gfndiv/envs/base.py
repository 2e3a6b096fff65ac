"""Common interface for the generative environments."""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from ..errors import CapExceededError, UsageError

DEFAULT_ENUM_CAP = 2_000_000


class _Final:
    """The absorbing final state s_f."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "SF"

    def __reduce__(self):
        return (_Final, ())


SF = _Final()


class DiscreteEnv(ABC):
    """A finite pointed DAG with a counting reference measure.

    Actions are integers in ``range(n_actions)``; the last index is the
    terminate move that sends a terminal state to :data:`SF`.
    """

    kind: str = "discrete"
    continuous = False
    n_actions: int
    max_steps: int

    @property
    def terminate(self) -> int:
        return self.n_actions - 1

    @abstractmethod
    def initial_state(self): ...

    @abstractmethod
    def is_terminal(self, s) -> bool: ...

    @abstractmethod
    def legal_actions(self, s) -> list[int]: ...

    @abstractmethod
    def _child(self, s, a): ...

    @abstractmethod
    def backward_parents(self, s) -> list[tuple[object, int]]:
        """``(parent, action)`` pairs with ``apply_action(parent, action) == s``."""

    @abstractmethod
    def _log_reward(self, x) -> float: ...

    @abstractmethod
    def count_terminals(self) -> float: ...

    @abstractmethod
    def iter_terminals(self): ...

    def forward_support(self, s) -> list[int]:
        if s is SF:
            raise UsageError("the final state has no forward support")
        return self.legal_actions(s)

    def apply_action(self, s, a):
        if s is SF:
            raise UsageError("cannot act from the final state")
        if a not in self.legal_actions(s):
            raise UsageError(f"action {a} is not legal in state {s!r}")
        if a == self.terminate:
            return SF
        return self._child(s, a)

    def n_parents(self, s) -> int:
        return len(self.backward_parents(s))

    def log_reward(self, x) -> float:
        if x is SF or not self.is_terminal(x):
            raise UsageError(f"log_reward needs a terminal state, got {x!r}")
        return self._log_reward(x)

    def action_mask(self, states) -> np.ndarray:
        mask = np.zeros((len(states), self.n_actions), dtype=bool)
        for i, s in enumerate(states):
            mask[i, self.legal_actions(s)] = True
        return mask

    def enumerate_terminals(self, cap: float = DEFAULT_ENUM_CAP) -> list:
        size = self.count_terminals()
        if size > cap:
            raise CapExceededError(size, cap)
        return list(self.iter_terminals())

    def manifest(self) -> dict:
        return {"kind": self.kind}


class ContinuousEnv(ABC):
    """Autoregressive IGP on R^d: each step substitutes the next coordinate.

    States are tuples of the coordinates fixed so far; the reference measure
    is Lebesgue per coordinate and the backward kernel is a point mass.
    """

    kind: str = "continuous"
    continuous = True
    d: int = 2

    @property
    def max_steps(self) -> int:
        return self.d + 1

    def initial_state(self):
        return ()

    def is_terminal(self, s) -> bool:
        return s is not SF and len(s) == self.d

    def forward_support(self, s):
        if s is SF:
            raise UsageError("the final state has no forward support")
        if self.is_terminal(s):
            return ("terminate",)
        return ("substitute", len(s))

    def apply_action(self, s, a):
        if s is SF:
            raise UsageError("cannot act from the final state")
        if self.is_terminal(s):
            if a != "terminate":
                raise UsageError("a complete vector only admits the terminate action")
            return SF
        if a == "terminate":
            raise UsageError("cannot terminate before every coordinate is fixed")
        return tuple(s) + (float(a),)

    def backward_parents(self, s):
        if s is SF or len(s) == 0:
            raise UsageError("the initial state has no parents")
        return [(tuple(s[:-1]), float(s[-1]))]

    def log_reward(self, x) -> float:
        if not self.is_terminal(x):
            raise UsageError(f"log_reward needs a terminal state, got {x!r}")
        return float(self.log_density(np.asarray(x, dtype=np.float64)[None, :])[0])

    @abstractmethod
    def log_density(self, xs: np.ndarray) -> np.ndarray:
        """Normalised target log-density at the rows of ``xs``."""

    @abstractmethod
    def sample_target(self, n: int, rng: np.random.Generator) -> np.ndarray: ...

    def encode(self, states) -> np.ndarray:
        """Prefix padded with zeros followed by a one-hot of the step index."""
        out = np.zeros((len(states), 2 * self.d))
        for i, s in enumerate(states):
            out[i, : len(s)] = s
            if len(s) < self.d:
                out[i, self.d + len(s)] = 1.0
        return out

    def manifest(self) -> dict:
        return {"kind": self.kind, "d": self.d}
