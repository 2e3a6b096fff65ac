"""Bayesian phylogenetic inference over rooted binary topologies.

A state is a forest of rooted binary trees whose leaf sets partition the
observed species.  Trees are nested 2-tuples with integer leaves, kept in
a canonical form (children ordered by smallest leaf) so that equal
topologies hash equally.  Forests are tuples of trees sorted the same way.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, UsageError
from .base import SF, DiscreteEnv

NUCLEOTIDES = "ACGT"


def min_leaf(tree) -> int:
    while not isinstance(tree, int):
        tree = tree[0]
    return tree


def amalgamate(a, b):
    """Join two trees under a new root."""
    return (a, b) if min_leaf(a) < min_leaf(b) else (b, a)


def leaves(tree) -> list[int]:
    if isinstance(tree, int):
        return [tree]
    return leaves(tree[0]) + leaves(tree[1])


def _sorted_forest(trees) -> tuple:
    return tuple(sorted(trees, key=min_leaf))


def all_topologies(n: int) -> list:
    """Every rooted binary topology on leaves ``0..n-1``; (2n-3)!! of them."""

    def insert(tree, k):
        out = [amalgamate(tree, k)]
        if not isinstance(tree, int):
            a, b = tree
            out += [amalgamate(x, b) for x in insert(a, k)]
            out += [amalgamate(a, y) for y in insert(b, k)]
        return out

    trees = [0]
    for k in range(1, n):
        trees = [t for tree in trees for t in insert(tree, k)]
    return trees


def double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def jc69_transition(rate: float, t: float) -> np.ndarray:
    """4x4 JC69 substitution probabilities after time ``t`` at rate ``rate``."""
    decay = np.exp(-4.0 * rate * t / 3.0)
    same = 0.25 + 0.75 * decay
    diff = 0.25 - 0.25 * decay
    P = np.full((4, 4), diff)
    np.fill_diagonal(P, same)
    return P


def _partials(tree, data, P, cache):
    """Per-site conditional likelihoods at ``tree``'s root, rescaled per site.

    Returns ``(partial, log_scale)`` with ``partial`` of shape (sites, 4),
    each row summing to 1, and the log of the removed scale per site.
    """
    if tree in cache:
        return cache[tree]
    if isinstance(tree, int):
        partial = np.zeros((data.shape[1], 4))
        partial[np.arange(data.shape[1]), data[tree]] = 1.0
        out = (partial, np.zeros(data.shape[1]))
    else:
        (pa, sa), (pb, sb) = (_partials(c, data, P, cache) for c in tree)
        prod = (pa @ P.T) * (pb @ P.T)
        total = prod.sum(axis=1)
        out = (prod / total[:, None], sa + sb + np.log(total))
    cache[tree] = out
    return out


def felsenstein_loglik(tree, data, rate: float, t: float = 1.0, cache=None) -> float:
    """Log-likelihood of ``data`` (species x sites, values 0..3) on ``tree``.

    JC69 on every edge with a common branch length, uniform root
    distribution, independent sites.
    """
    data = np.asarray(data)
    if sorted(leaves(tree)) != list(range(data.shape[0])):
        raise ConfigurationError(
            f"tree leaves {sorted(leaves(tree))} do not match {data.shape[0]} species in the data"
        )
    P = jc69_transition(rate, t)
    partial, log_scale = _partials(tree, data, P, {} if cache is None else cache)
    return float(np.sum(np.log(0.25 * partial.sum(axis=1)) + log_scale))


def random_topology(n: int, rng: np.random.Generator):
    """Join uniformly chosen pairs of roots until one tree remains."""
    forest = list(range(n))
    while len(forest) > 1:
        i, j = sorted(rng.choice(len(forest), size=2, replace=False))
        b = forest.pop(j)
        a = forest.pop(i)
        forest.append(amalgamate(a, b))
    return forest[0]


def simulate_jc69(tree, rate: float, t: float, sites: int, seed: int) -> np.ndarray:
    """Evolve ``sites`` nucleotides from a uniform root down ``tree``."""
    rng = np.random.default_rng(seed)
    P = jc69_transition(rate, t)
    cdf = np.cumsum(P, axis=1)
    n = len(leaves(tree))
    out = np.zeros((n, sites), dtype=np.int64)

    def descend(node, states):
        if isinstance(node, int):
            out[node] = states
            return
        for child in node:
            u = rng.random(sites)
            child_states = (u[:, None] > cdf[states]).sum(axis=1)
            descend(child, np.minimum(child_states, 3))

    descend(tree, rng.integers(0, 4, size=sites))
    return out


def write_phylo_data(path, names, data) -> None:
    lines = [f"{name}\t{''.join(NUCLEOTIDES[v] for v in row)}" for name, row in zip(names, data)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_phylo_data(path) -> tuple[list[str], np.ndarray]:
    names, rows = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, seq = line.split("\t")
            row = [NUCLEOTIDES.index(c) for c in seq.strip().upper()]
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: expected 'name<TAB>ACGT...'") from exc
        names.append(name)
        rows.append(row)
    if len({len(r) for r in rows}) != 1:
        raise ConfigurationError(f"{path}: sequences have different lengths")
    return names, np.asarray(rows, dtype=np.int64)


@lru_cache(maxsize=None)
def _pairs(k: int) -> tuple:
    return tuple(combinations(range(k), 2))


@lru_cache(maxsize=None)
def _pair_index(k: int) -> dict:
    return {p: i for i, p in enumerate(_pairs(k))}


class PhyloEnv(DiscreteEnv):
    """Join two roots per step until a single phylogeny remains.

    Action ``a < K(K-1)/2`` joins the ``a``-th pair (lexicographic over the
    K current roots in canonical order); the last action terminates.
    """

    kind = "phylo"

    def __init__(self, data, rate: float = 0.3, branch_length: float = 1.0, names=None):
        data = np.asarray(data, dtype=np.int64)
        if data.ndim != 2 or data.shape[0] < 2:
            raise ConfigurationError("phylo data must be (species >= 2) x sites")
        if rate <= 0 or branch_length <= 0:
            raise ConfigurationError("mutation rate and branch length must be positive")
        self.data = data
        self.n = data.shape[0]
        self.rate = float(rate)
        self.branch_length = float(branch_length)
        self.names = list(names) if names is not None else [f"s{i}" for i in range(self.n)]
        self.n_actions = self.n * (self.n - 1) // 2 + 1
        self.max_steps = self.n
        self.P = jc69_transition(self.rate, self.branch_length)
        self._partial_cache: dict = {}
        self._tree_cache: dict = {}

    def initial_state(self):
        return tuple(range(self.n))

    def is_terminal(self, s) -> bool:
        return s is not SF and len(s) == 1

    def legal_actions(self, s):
        k = len(s)
        if k == 1:
            return [self.terminate]
        return list(range(k * (k - 1) // 2))

    def _child(self, s, a):
        i, j = _pairs(len(s))[a]
        rest = [t for m, t in enumerate(s) if m != i and m != j]
        return _sorted_forest(rest + [amalgamate(s[i], s[j])])

    def backward_parents(self, s):
        if s is SF or len(s) == self.n:
            raise UsageError("the forest of singletons has no parents")
        out = []
        for m, tree in enumerate(s):
            if isinstance(tree, int):
                continue
            parent = _sorted_forest([t for k, t in enumerate(s) if k != m] + list(tree))
            pos = (parent.index(tree[0]), parent.index(tree[1]))
            out.append((parent, _pair_index(len(parent))[tuple(sorted(pos))]))
        return out

    def n_parents(self, s) -> int:
        return sum(1 for t in s if not isinstance(t, int))

    def _log_reward(self, x) -> float:
        return felsenstein_loglik(x[0], self.data, self.rate, self.branch_length, self._partial_cache)

    def action_mask(self, states) -> np.ndarray:
        mask = np.zeros((len(states), self.n_actions), dtype=bool)
        for i, s in enumerate(states):
            k = len(s)
            if k == 1:
                mask[i, self.terminate] = True
            else:
                mask[i, : k * (k - 1) // 2] = True
        return mask

    def count_terminals(self) -> float:
        return double_factorial(2 * self.n - 3)

    def iter_terminals(self):
        return ((t,) for t in all_topologies(self.n))

    # -- graph features for the GIN policy --------------------------------

    node_dim = 5

    def tree_graph(self, tree):
        """Node features (m, 5), undirected edges and the root's local index."""
        hit = self._tree_cache.get(tree)
        if hit is not None:
            return hit
        feats, edges = [], []

        def visit(node):
            partial, _ = _partials(node, self.data, self.P, self._partial_cache)
            idx = len(feats)
            feats.append(np.append(partial.mean(axis=0), 0.0))
            if not isinstance(node, int):
                for child in node:
                    edges.append((idx, visit(child)))
            return idx

        root = visit(tree)
        feats[root][4] = 1.0
        out = (np.asarray(feats), edges, root)
        self._tree_cache[tree] = out
        return out

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "species": self.n,
            "sites": int(self.data.shape[1]),
            "rate": self.rate,
            "branch_length": self.branch_length,
            "names": self.names,
            "data": ["".join(NUCLEOTIDES[v] for v in row) for row in self.data],
        }
