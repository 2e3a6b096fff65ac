"""Score-function control variate, leave-one-out baseline and variance diagnostics.

Gradient vectors here are flat over every policy parameter (``log_z`` is
excluded, the divergence objectives never touch it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamStore
from .errors import ConfigurationError, UsageError


@dataclass(frozen=True)
class CVConfig:
    use_score_cv: bool = True
    use_loo: bool = True
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("control-variate epsilon must be positive")


CV_ON = CVConfig(True, True)
CV_OFF = CVConfig(False, False)


@dataclass(frozen=True)
class VarianceReport:
    trace: float
    batch_size: int
    repetitions: int


def baseline_hat(sum_score, sum_f_grad, epsilon: float = 1e-8) -> float:
    """``<sum_score, sum_f_grad> / (epsilon + |sum_score|^2)``."""
    sum_score = np.ravel(sum_score)
    sum_f_grad = np.ravel(sum_f_grad)
    if sum_score.shape != sum_f_grad.shape:
        raise ConfigurationError("baseline vectors must have equal length")
    return float(sum_score @ sum_f_grad / (epsilon + sum_score @ sum_score))


def cv_combine(sum_f_grad, sum_score, n: int, cfg: CVConfig) -> tuple[np.ndarray, float]:
    """``(1/n) (sum grad f - a * sum score)`` and the baseline ``a`` used."""
    a = baseline_hat(sum_score, sum_f_grad, cfg.epsilon) if cfg.use_score_cv else 0.0
    return (np.asarray(sum_f_grad) - a * np.asarray(sum_score)) / n, a


def cv_first_term(f_grads, score_grads, cfg: CVConfig) -> np.ndarray:
    """Control-variate estimate of E[grad f] from per-trajectory gradients (N, P)."""
    f_grads = np.atleast_2d(f_grads)
    score_grads = np.atleast_2d(score_grads)
    out, _ = cv_combine(f_grads.sum(axis=0), score_grads.sum(axis=0), len(f_grads), cfg)
    return out


def loo_centered(f) -> np.ndarray:
    """``f_n`` minus the mean of the other N-1 values."""
    f = np.asarray(f, dtype=np.float64)
    n = len(f)
    if n < 2:
        raise UsageError("the leave-one-out baseline needs at least two samples")
    return f - (f.sum() - f) / (n - 1)


def loo_surrogate(f, log_pf: Node) -> Node:
    """Scalar whose gradient is the leave-one-out estimate of E[f grad log p_F]."""
    weights = ad.stop_gradient(loo_centered(f))
    return ad.dot(weights, log_pf) * (1.0 / len(weights.value))


def loo_estimate(f, log_pf: Node, store: ParamStore) -> np.ndarray:
    """Leave-one-out gradient through the stop-gradient surrogate (flat)."""
    return store.flatten(ad.backward(loo_surrogate(f, log_pf), store))


def loo_direct(f, score_grads) -> np.ndarray:
    """The same estimate as an explicit sum over per-trajectory scores (N, P)."""
    score_grads = np.atleast_2d(score_grads)
    return loo_centered(f) @ score_grads / len(score_grads)


def per_trajectory_scores(log_pf: Node, store: ParamStore) -> np.ndarray:
    """Row n holds the flat gradient of log p_F(tau_n); one backward per row."""
    n = log_pf.shape[0]
    rows = []
    for i in range(n):
        onehot = np.zeros(n)
        onehot[i] = 1.0
        rows.append(store.flatten(ad.backward(ad.dot(onehot, log_pf), store)))
    return np.array(rows)


def trace_of_covariance(estimates) -> float:
    """Sum over coordinates of the unbiased sample variance."""
    estimates = np.asarray(estimates, dtype=np.float64)
    if len(estimates) < 2:
        raise UsageError("variance needs at least two repetitions")
    return float(estimates.var(axis=0, ddof=1).sum())


def variance_trace(estimator, store: ParamStore, spec, batch_size: int, M: int, rng) -> VarianceReport:
    """Trace of the covariance of ``M`` independent gradient estimates.

    ``estimator(spec, batch_size, seed)`` returns one flat gradient estimate
    computed from a fresh batch; ``rng`` supplies the batch seeds.  The
    parameters in ``store`` must stay frozen meanwhile.
    """
    if M < 2:
        raise UsageError("variance_trace needs M >= 2")
    before = store.flatten(store.values(), include_log_z=True)
    seeds = rng.integers(0, 2**31 - 1, size=M)
    estimates = [np.asarray(estimator(spec, batch_size, int(s))) for s in seeds]
    if not np.array_equal(before, store.flatten(store.values(), include_log_z=True)):
        raise UsageError("parameters changed while measuring variance")
    return VarianceReport(trace_of_covariance(estimates), batch_size, M)
