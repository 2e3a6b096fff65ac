"""Exact quantities by exhaustive trajectory enumeration (tiny environments).

These serve as oracles: every expectation over P_F is a finite sum, and
gradients of the sums come straight from the autodiff engine without going
through any estimator code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .envs import DiscreteEnv
from .objectives import RewardShift
from .sampler import Batch, all_trajectories, rollout


@dataclass
class Enumeration:
    """Every complete trajectory scored under the current policy."""

    batch: Batch
    log_target: np.ndarray  # log p_B(tau | x) + log r~(x)

    @property
    def log_pf(self) -> ad.Node:
        return self.batch.log_pf

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.batch.log_pf.value)

    @property
    def log_z(self) -> float:
        """log of the shifted partition function, sum_tau p_B(tau|x) r~(x)."""
        t = self.log_target
        return float(t.max() + np.log(np.exp(t - t.max()).sum()))


def enumerate_trajectories(env: DiscreteEnv, policy, shift: RewardShift | None = None, cap: float = 2e6) -> Enumeration:
    shift = shift or RewardShift()
    batch = rollout(env, policy, actions=all_trajectories(env, cap))
    return Enumeration(batch, batch.log_pb + shift.apply(batch.log_reward))


def _grad(root, store: ParamStore, include_log_z=False) -> np.ndarray:
    return store.flatten(ad.backward(root, store), include_log_z)


def score_expectation(en: Enumeration, store: ParamStore) -> np.ndarray:
    """sum_tau p_F(tau) grad log p_F(tau), which should vanish."""
    return _grad(ad.dot(ad.stop_gradient(en.probs), en.log_pf), store)


def revkl_value_and_grad(en: Enumeration, store: ParamStore) -> tuple[float, np.ndarray]:
    """KL(P_F || P_B) against the shifted (unnormalised) target."""
    s = en.log_pf
    root = ad.sum_(ad.exp(s) * (s - en.log_target))
    return float(root.value), _grad(root, store)


def fwdkl_grad(en: Enumeration, store: ParamStore) -> np.ndarray:
    """grad KL(P_B || P_F) = -E_{P_B}[grad log p_F]."""
    q = np.exp(en.log_target - en.log_z)
    return _grad(-ad.dot(q, en.log_pf), store)


def renyi_value_and_grad(en: Enumeration, store: ParamStore, alpha: float) -> tuple[float, np.ndarray]:
    """R_alpha(P_F || P_B) with the normalised target."""
    inner = alpha * en.log_pf + (1.0 - alpha) * (en.log_target - en.log_z)
    lse = ad.logsumexp(ad.reshape(inner, (1, -1)))
    root = ad.sum_(lse) * (1.0 / (alpha - 1.0))
    return float(root.value), _grad(root, store)


def tsallis_value_and_grad(en: Enumeration, store: ParamStore, alpha: float) -> tuple[float, np.ndarray]:
    """T_alpha with the normalised target; the gradient is returned unscaled."""
    inner = alpha * en.log_pf + (1.0 - alpha) * (en.log_target - en.log_z)
    root = (ad.sum_(ad.exp(inner)) - 1.0) * (1.0 / (alpha - 1.0))
    return float(root.value), _grad(root, store)


def tsallis_estimator_target(en: Enumeration, store: ParamStore, alpha: float) -> np.ndarray:
    """What the Tsallis estimator is unbiased for: Z~^(1-alpha) grad T_alpha."""
    _, g = tsallis_value_and_grad(en, store, alpha)
    return np.exp((1.0 - alpha) * en.log_z) * g


def fwdkl_unnormalized_target(en: Enumeration, store: ParamStore) -> np.ndarray:
    """What the unnormalised importance estimator targets: Z~ grad KL(P_B || P_F)."""
    return np.exp(en.log_z) * fwdkl_grad(en, store)


def tb_expected_grad(en: Enumeration, store: ParamStore, include_log_z: bool = False) -> np.ndarray:
    """grad of E_{P_F}[L_TB] holding the sampling distribution fixed (on-policy gradient)."""
    resid = en.log_pf - en.log_target + store.log_z
    root = ad.dot(ad.stop_gradient(en.probs), resid * resid)
    return _grad(root, store, include_log_z)


def expectation(en: Enumeration, values) -> np.ndarray:
    """sum_tau p_F(tau) values[tau] for an array indexed by trajectory first."""
    return np.tensordot(en.probs, np.asarray(values), axes=(0, 0))
