"""Policy network building blocks: MLP, deep set, GIN and a Gaussian mixture head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Node, ParamStore
from .errors import ConfigurationError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden: tuple = (64, 64)
    name: str = "mlp"

    def __post_init__(self):
        if min((self.input_dim, self.output_dim) + tuple(self.hidden)) <= 0:
            raise ConfigurationError(f"MLP widths must be positive: {self}")


def mlp_forward(spec: MlpSpec, store: ParamStore, x) -> Node:
    """Affine layers with leaky-ReLU in between and a linear output."""
    x = ad.as_node(x)
    if x.shape[-1] != spec.input_dim:
        raise ConfigurationError(f"{spec.name}: input dim {x.shape[-1]} != {spec.input_dim}")
    widths = (spec.input_dim,) + tuple(spec.hidden) + (spec.output_dim,)
    h = x
    for i in range(len(widths) - 1):
        W = store.param(f"{spec.name}.W{i}", (widths[i], widths[i + 1]))
        b = store.param(f"{spec.name}.b{i}", (widths[i + 1],), init="zeros")
        h = ad.matmul(h, W) + b
        if i < len(widths) - 2:
            h = ad.leaky_relu(h)
    return h


@dataclass(frozen=True)
class DeepSetSpec:
    element_dim: int
    output_dim: int
    encoder: tuple = (64,)
    embed_dim: int = 64
    decoder: tuple = (64, 64)
    name: str = "deepset"

    def encoder_spec(self) -> MlpSpec:
        return MlpSpec(self.element_dim, self.embed_dim, self.encoder, f"{self.name}.phi")

    def decoder_spec(self) -> MlpSpec:
        return MlpSpec(self.embed_dim, self.output_dim, self.decoder, f"{self.name}.rho")


def deepset_pooled_forward(spec: DeepSetSpec, store: ParamStore, elements, membership) -> Node:
    """Deep set over a shared pool of element vectors.

    ``elements`` is (M, element_dim); ``membership`` is a (B, M) 0/1 matrix
    saying which pool rows belong to each set.  Sum pooling makes the result
    invariant to element order; an empty set pools to the zero vector.
    """
    elements = np.asarray(elements, dtype=np.float64)
    if elements.ndim != 2 or elements.shape[1] != spec.element_dim:
        raise ConfigurationError(f"{spec.name}: elements must be (M, {spec.element_dim})")
    phi = ad.leaky_relu(mlp_forward(spec.encoder_spec(), store, elements))
    pooled = ad.matmul_const(np.asarray(membership, dtype=np.float64), phi)
    return mlp_forward(spec.decoder_spec(), store, pooled)


def deepset_forward(spec: DeepSetSpec, store: ParamStore, sets) -> Node:
    """Deep set over a list of (n_i, element_dim) arrays."""
    sizes = [len(s) for s in sets]
    rows = [np.asarray(s, dtype=np.float64).reshape(-1, spec.element_dim) for s in sets]
    elements = np.concatenate(rows) if sum(sizes) else np.zeros((0, spec.element_dim))
    membership = np.zeros((len(sets), sum(sizes)))
    start = 0
    for i, n in enumerate(sizes):
        membership[i, start : start + n] = 1.0
        start += n
    if elements.shape[0] == 0:
        pooled = np.zeros((len(sets), spec.embed_dim))
        return mlp_forward(spec.decoder_spec(), store, pooled)
    return deepset_pooled_forward(spec, store, elements, membership)


@dataclass(frozen=True)
class GinSpec:
    node_dim: int
    hidden: int = 64
    layers: int = 2
    name: str = "gin"


def gin_forward(spec: GinSpec, store: ParamStore, features, adjacency) -> Node:
    """Node embeddings after ``layers`` rounds of ``h <- MLP(h + A h)``.

    ``adjacency`` is a symmetric (n, n) matrix, dense or sparse.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.node_dim:
        raise ConfigurationError(f"{spec.name}: node features must be (n, {spec.node_dim})")
    A = sp.csr_matrix(adjacency)
    h = ad.as_node(features)
    width = spec.node_dim
    for layer in range(spec.layers):
        agg = h + ad.matmul_const(A, h)
        mlp = MlpSpec(width, spec.hidden, (spec.hidden,), f"{spec.name}.l{layer}")
        h = ad.leaky_relu(mlp_forward(mlp, store, agg))
        width = spec.hidden
    return h


def forest_adjacency(n_nodes: int, edges) -> sp.csr_matrix:
    if not edges:
        return sp.csr_matrix((n_nodes, n_nodes))
    e = np.asarray(edges)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_nodes, n_nodes))


def pair_scores(spec: MlpSpec, store: ParamStore, emb: Node, u, v) -> Node:
    """Symmetric score for joining node ``u[i]`` with ``v[i]``; shape (P,)."""
    eu, ev = ad.take(emb, u), ad.take(emb, v)
    pair = ad.concat([eu + ev, eu * ev], axis=1)
    return ad.reshape(mlp_forward(spec, store, pair), (len(u),))


# ---------------------------------------------------------------------------
# one-dimensional Gaussian mixture head


@dataclass(frozen=True)
class MixtureHeadSpec:
    n_components: int = 8

    @property
    def width(self) -> int:
        return 3 * self.n_components


def mixture_log_density(head, x) -> Node:
    """``log sum_k w_k N(x | mu_k, sigma_k^2)`` row-wise.

    ``head`` is (B, 3K): K logits, K means, K log-std-devs; ``x`` is (B,).
    """
    head = ad.as_node(head)
    k = head.shape[1] // 3
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    log_w = ad.log_softmax(ad.columns(head, 0, k))
    mu = ad.columns(head, k, 2 * k)
    log_sd = ad.columns(head, 2 * k, 3 * k)
    z = (x - mu) * ad.exp(-log_sd)
    comps = log_w - 0.5 * (z * z) - log_sd - 0.5 * LOG_2PI
    return ad.logsumexp(comps)


def mixture_sample(head, rngs) -> tuple[np.ndarray, np.ndarray]:
    """Draw one value per row (component first, then normal) and its log-density.

    ``rngs`` holds one generator per row so rows are independent streams.
    """
    values = head.value if isinstance(head, Node) else np.asarray(head, dtype=np.float64)
    k = values.shape[1] // 3
    logits, mu, log_sd = values[:, :k], values[:, k : 2 * k], values[:, 2 * k :]
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    x = np.empty(values.shape[0])
    for i, rng in enumerate(rngs):
        comp = min(int(np.searchsorted(np.cumsum(w[i]), rng.random() * w[i].sum(), side="right")), k - 1)
        x[i] = mu[i, comp] + np.exp(log_sd[i, comp]) * rng.standard_normal()
    return x, mixture_log_density(values, x).value
