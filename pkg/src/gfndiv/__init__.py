"""Divergence-based training of generative flow networks.

The package bundles a small reverse-mode autodiff engine, policy networks,
five environments, the trajectory-balance loss and four divergence
gradient estimators with variance reduction, evaluation metrics, Adam, and
a CSV-emitting experiment CLI.
"""

from .autodiff import Node, ParamStore, backward, finite_diff_check
from .objectives import DivergenceSpec, GradResult, RewardShift, estimate, perfect_policy_oracle
from .varred import CVConfig, VarianceReport

__version__ = "0.1.0"

__all__ = [
    "CVConfig",
    "DivergenceSpec",
    "GradResult",
    "Node",
    "ParamStore",
    "RewardShift",
    "VarianceReport",
    "backward",
    "estimate",
    "finite_diff_check",
    "perfect_policy_oracle",
]
