"""Forward policies: map a batch of states to action log-probabilities.

Discrete policies return a masked log-softmax of shape (B, n_actions) with
illegal actions at ``-inf``.  Continuous policies return the mixture-head
parameters for the next coordinate.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Node, ParamStore
from .envs import ContinuousEnv, DiscreteEnv, PhyloEnv, SeqEnv, SetEnv
from .envs.phylo import _pairs
from .errors import ConfigurationError


def masked_log_softmax(logits: Node, mask: np.ndarray) -> Node:
    penalty = np.where(mask, 0.0, -np.inf)
    return ad.log_softmax(logits + penalty)


class DiscretePolicy:
    """Base class; subclasses implement :meth:`logits`."""

    def __init__(self, env: DiscreteEnv, store: ParamStore):
        self.env = env
        self.store = store

    def logits(self, states) -> Node:
        raise NotImplementedError

    def log_probs(self, states, mask=None) -> Node:
        if mask is None:
            mask = self.env.action_mask(states)
        return masked_log_softmax(self.logits(states), mask)


class MlpPolicy(DiscretePolicy):
    """MLP over the environment's flat state encoding."""

    def __init__(self, env, store, hidden=(64, 64), name="pf"):
        super().__init__(env, store)
        dim = env.encode([env.initial_state()]).shape[1]
        self.spec = nets.MlpSpec(dim, env.n_actions, tuple(hidden), name)

    def logits(self, states):
        return nets.mlp_forward(self.spec, self.store, self.env.encode(states))


class DeepSetPolicy(DiscretePolicy):
    """Deep set over the one-hot codes of the elements already in the set."""

    def __init__(self, env: SetEnv, store, hidden=64, name="pf"):
        super().__init__(env, store)
        self.spec = nets.DeepSetSpec(
            env.D, env.n_actions, (hidden,), hidden, (hidden, hidden), name
        )
        self._elements = np.eye(env.D)

    def logits(self, states):
        membership = self.env.encode(states)
        return nets.deepset_pooled_forward(self.spec, self.store, self._elements, membership)


class GinPolicy(DiscretePolicy):
    """GIN over the forest; join logits come from a symmetric pair scorer."""

    def __init__(self, env: PhyloEnv, store, hidden=64, layers=2, name="pf"):
        super().__init__(env, store)
        self.gin = nets.GinSpec(env.node_dim, hidden, layers, f"{name}.gin")
        width = hidden if layers > 0 else env.node_dim
        self.scorer = nets.MlpSpec(2 * width, 1, (hidden,), f"{name}.pair")

    def logits(self, states):
        env = self.env
        feats, edges, roots = [], [], []
        offset = 0
        for s in states:
            row_roots = []
            for tree in s:
                f, e, r = env.tree_graph(tree)
                feats.append(f)
                edges.extend((a + offset, b + offset) for a, b in e)
                row_roots.append(r + offset)
                offset += len(f)
            roots.append(row_roots)
        features = np.concatenate(feats)
        emb = nets.gin_forward(self.gin, self.store, features, nets.forest_adjacency(offset, edges))
        u, v, slot = [], [], []
        for b, row in enumerate(roots):
            k = len(row)
            for a, (i, j) in enumerate(_pairs(k)):
                u.append(row[i])
                v.append(row[j])
                slot.append(b * env.n_actions + a)
        size = len(states) * env.n_actions
        if not u:
            return ad.Node(np.zeros((len(states), env.n_actions)))
        scores = nets.pair_scores(self.scorer, self.store, emb, np.array(u), np.array(v))
        return ad.reshape(ad.scatter(scores, np.array(slot), size), (len(states), env.n_actions))


class TablePolicy(DiscretePolicy):
    """Fixed log-probabilities looked up per state (no parameters)."""

    def __init__(self, env, table: dict):
        super().__init__(env, ParamStore())
        self.table = table

    def logits(self, states):
        return Node(np.stack([self.table[s] for s in states]))

    def log_probs(self, states, mask=None):
        return self.logits(states)


class ContinuousPolicy:
    """MLP from the padded prefix plus step one-hot to a Gaussian-mixture head."""

    def __init__(self, env: ContinuousEnv, store: ParamStore, hidden=(64, 64), n_components=8, name="pf"):
        self.env = env
        self.store = store
        self.mix = nets.MixtureHeadSpec(n_components)
        self.spec = nets.MlpSpec(2 * env.d, self.mix.width, tuple(hidden), name)

    def head(self, states) -> Node:
        return nets.mlp_forward(self.spec, self.store, self.env.encode(states))

    def log_pt(self, xs) -> np.ndarray:
        """Exact terminal log-density: the unique trajectory's log p_F."""
        from .sampler import continuous_log_pf

        return continuous_log_pf(self.env, self, np.atleast_2d(xs)).value

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        from .sampler import rollout

        seeds = rng.integers(0, 2**63 - 1, size=n)
        rngs = [np.random.default_rng(int(s)) for s in seeds]
        return np.asarray(rollout(self.env, self, rngs).terminals, dtype=np.float64)


def make_policy(env, store: ParamStore, arch: str | None = None, hidden: int = 64):
    """Default architecture per environment; ``arch`` overrides it."""
    if isinstance(env, ContinuousEnv):
        return ContinuousPolicy(env, store, (hidden, hidden))
    if arch is None:
        arch = {SetEnv: "deepset", SeqEnv: "mlp", PhyloEnv: "gin"}.get(type(env), "mlp")
    if arch == "mlp":
        return MlpPolicy(env, store, (hidden, hidden))
    if arch == "deepset" and isinstance(env, SetEnv):
        return DeepSetPolicy(env, store, hidden)
    if arch == "gin" and isinstance(env, PhyloEnv):
        return GinPolicy(env, store, hidden)
    raise ConfigurationError(f"architecture {arch!r} does not fit environment {env.kind!r}")


__all__ = [
    "ContinuousPolicy",
    "DeepSetPolicy",
    "DiscretePolicy",
    "GinPolicy",
    "MlpPolicy",
    "TablePolicy",
    "make_policy",
    "masked_log_softmax",
]
