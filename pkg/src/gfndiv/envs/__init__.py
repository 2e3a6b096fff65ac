from .base import DEFAULT_ENUM_CAP, SF, ContinuousEnv, DiscreteEnv
from .continuous import (
    BananaEnv,
    GaussianMixtureEnv,
    banana_exact_sample,
    banana_log_density,
    grid_centers,
)
from .phylo import (
    PhyloEnv,
    all_topologies,
    amalgamate,
    felsenstein_loglik,
    jc69_transition,
    random_topology,
    read_phylo_data,
    simulate_jc69,
    write_phylo_data,
)
from .sequences import SeqEnv
from .sets import SetEnv

__all__ = [
    "DEFAULT_ENUM_CAP",
    "SF",
    "BananaEnv",
    "ContinuousEnv",
    "DiscreteEnv",
    "GaussianMixtureEnv",
    "PhyloEnv",
    "SeqEnv",
    "SetEnv",
    "all_topologies",
    "amalgamate",
    "banana_exact_sample",
    "banana_log_density",
    "felsenstein_loglik",
    "grid_centers",
    "jc69_transition",
    "random_topology",
    "read_phylo_data",
    "simulate_jc69",
    "write_phylo_data",
]
