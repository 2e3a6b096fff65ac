"""Training signals: the trajectory-balance loss and four divergence gradients.

Each estimator takes an on-policy :class:`~gfndiv.sampler.Batch` and returns
a :class:`GradResult` holding one gradient array per parameter block.  The
divergence estimators follow the REINFORCE decomposition

    E[grad f(tau) + f(tau) grad log p_F(tau)],

with the score-function control variate on the first term and the
leave-one-out baseline on the second, each switchable through
:class:`~gfndiv.varred.CVConfig`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import LOG_Z, ParamStore
from .envs import DiscreteEnv
from .errors import CapExceededError, ConfigurationError, DegenerateBatchError
from .policies import TablePolicy
from .sampler import Batch
from .varred import CV_ON, CVConfig, cv_combine, loo_surrogate

KINDS = ("tb", "revkl", "fwdkl", "renyi", "tsallis")


@dataclass(frozen=True)
class DivergenceSpec:
    """Objective selector.

    ``self_normalize`` applies to the forward KL only (weights normalised
    within the batch); ``batch_shift`` applies to Tsallis only and rescales
    ``g`` by the batch maximum, which is harmless for Adam but makes the
    estimate unbiased only up to a random positive factor.
    """

    kind: str
    alpha: float = 0.5
    cv: CVConfig = CV_ON
    self_normalize: bool = True
    batch_shift: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown objective {self.kind!r}; choose from {KINDS}")
        if self.kind in ("renyi", "tsallis") and self.alpha == 1.0:
            raise ConfigurationError("alpha = 1 is excluded for Renyi and Tsallis (use revkl)")

    @property
    def label(self) -> str:
        if self.kind in ("renyi", "tsallis"):
            return f"{self.kind}-{self.alpha:g}"
        return self.kind


@dataclass
class RewardShift:
    """Constant subtracted from every log-reward: the max over a calibration batch."""

    offset: float = 0.0

    @classmethod
    def calibrate(cls, log_rewards) -> "RewardShift":
        return cls(float(np.max(log_rewards)))

    def apply(self, log_r):
        return np.asarray(log_r, dtype=np.float64) - self.offset


@dataclass
class GradResult:
    grads: dict
    value: float
    diagnostics: dict = field(default_factory=dict)

    def flat(self, store: ParamStore, include_log_z: bool = False) -> np.ndarray:
        return store.flatten(self.grads, include_log_z)


def _target(batch: Batch, shift: RewardShift) -> np.ndarray:
    """log p_B(tau | x) + log r~(x) per trajectory."""
    return batch.log_pb + shift.apply(batch.log_reward)


def _as_result(store: ParamStore, vec: np.ndarray, value: float, **diag) -> GradResult:
    if not np.all(np.isfinite(vec)):
        diag["non_finite"] = True
    return GradResult(store.unflatten(vec), float(value), diag)


def tb_loss(batch: Batch, store: ParamStore, shift: RewardShift | None = None) -> GradResult:
    """Mean squared trajectory-balance violation and its gradient (log Z included)."""
    shift = shift or RewardShift()
    resid = batch.log_pf - _target(batch, shift) + store.log_z
    loss = ad.mean(resid * resid)
    grads = ad.backward(loss, store)
    return GradResult(grads, float(loss.value), {"log_z": float(store.log_z.value)})


def log_g(batch: Batch, alpha: float, shift: RewardShift | None = None) -> ad.Node:
    """``(1 - alpha) (log p_B + log r~ - log p_F)`` as a differentiable node."""
    if alpha == 1.0:
        raise ConfigurationError("log g is undefined at alpha = 1")
    shift = shift or RewardShift()
    return (1.0 - alpha) * (_target(batch, shift) - batch.log_pf)


def _score_sum(batch: Batch, store: ParamStore) -> np.ndarray:
    return store.flatten(ad.backward(ad.sum_(batch.log_pf), store))


def _second_term(f: np.ndarray, batch: Batch, store: ParamStore, cfg: CVConfig) -> np.ndarray:
    """Estimate of E[f grad log p_F]: leave-one-out or the plain batch mean."""
    if cfg.use_loo:
        root = loo_surrogate(f, batch.log_pf)
    else:
        root = ad.dot(ad.stop_gradient(f), batch.log_pf) * (1.0 / len(f))
    return store.flatten(ad.backward(root, store))


def _alpha_numerator(batch, store, spec, shift, subtract_max):
    """E[grad g + g grad log p_F] with the configured variance reduction."""
    lg = log_g(batch, spec.alpha, shift)
    if np.all(np.isneginf(lg.value)) or np.any(np.isnan(lg.value)):
        raise DegenerateBatchError("every log g in the batch is -inf or nan")
    m = float(lg.value.max()) if subtract_max else 0.0
    g_node = ad.exp(lg - m)
    g = g_node.value
    n = len(g)
    sum_score = _score_sum(batch, store)
    sum_grad_g = store.flatten(ad.backward(ad.sum_(g_node), store))
    first, a = cv_combine(sum_grad_g, sum_score, n, spec.cv)
    second = _second_term(g, batch, store, spec.cv)
    return first + second, g, m, a


def renyi_grad(batch, store, spec: DivergenceSpec, shift: RewardShift | None = None) -> GradResult:
    """Ratio estimator of the Renyi-alpha gradient; the batch max of log g cancels."""
    shift = shift or RewardShift()
    num, g, m, a = _alpha_numerator(batch, store, spec, shift, subtract_max=True)
    mean_g = g.mean()
    vec = num / ((spec.alpha - 1.0) * mean_g)
    value = (np.log(mean_g) + m) / (spec.alpha - 1.0)
    return _as_result(store, vec, value, baseline=a)


def tsallis_grad(batch, store, spec: DivergenceSpec, shift: RewardShift | None = None) -> GradResult:
    """Tsallis-alpha gradient up to the positive factor Z~^(1 - alpha)."""
    shift = shift or RewardShift()
    num, g, m, a = _alpha_numerator(batch, store, spec, shift, subtract_max=spec.batch_shift)
    vec = num / (spec.alpha - 1.0)
    value = (g.mean() * np.exp(m) - 1.0) / (spec.alpha - 1.0)
    return _as_result(store, vec, value, baseline=a)


def revkl_grad(batch, store, spec: DivergenceSpec, shift: RewardShift | None = None) -> GradResult:
    """Reverse KL: grad f = grad log p_F, so the control variate nearly cancels it."""
    shift = shift or RewardShift()
    f = batch.log_pf.value - _target(batch, shift)
    sum_score = _score_sum(batch, store)
    first, a = cv_combine(sum_score, sum_score, len(f), spec.cv)
    vec = first + _second_term(f, batch, store, spec.cv)
    return _as_result(store, vec, f.mean(), baseline=a)


def importance_weights(batch, shift: RewardShift, self_normalize: bool = True) -> np.ndarray:
    """``p_B r~ / p_F`` per trajectory; normalised to mean one if requested."""
    lw = _target(batch, shift) - batch.log_pf.value
    if self_normalize:
        w = np.exp(lw - lw.max())
        return len(w) * w / w.sum()
    return np.exp(lw)


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=np.float64)
    return float(w.sum() ** 2 / np.sum(w * w))


def fwdkl_grad(batch, store, spec: DivergenceSpec, shift: RewardShift | None = None) -> GradResult:
    """Forward KL via importance weights on the score: ``-E[w grad log p_F]``.

    The weighted term has no ``grad f`` part, so only the leave-one-out
    switch acts here.  Unnormalised weights give an unbiased estimate of
    ``Z~`` times the gradient.
    """
    shift = shift or RewardShift()
    w = importance_weights(batch, shift, spec.self_normalize)
    ess = effective_sample_size(w)
    if ess < 2.0:
        warnings.warn(f"importance weights degenerate: effective sample size {ess:.2f}", RuntimeWarning)
    vec = -_second_term(w, batch, store, spec.cv)
    return _as_result(store, vec, float(np.mean(w)), ess=ess)


def estimate(batch, store, spec: DivergenceSpec, shift: RewardShift | None = None) -> GradResult:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "tb":
        return tb_loss(batch, store, shift)
    fn = {"revkl": revkl_grad, "fwdkl": fwdkl_grad, "renyi": renyi_grad, "tsallis": tsallis_grad}[spec.kind]
    out = fn(batch, store, spec, shift)
    out.grads[LOG_Z] = np.zeros(())
    return out


# ---------------------------------------------------------------------------
# exactly balanced policy by dynamic programming


@dataclass
class PerfectPolicy:
    policy: TablePolicy
    log_z: float
    log_flows: dict


def perfect_policy_oracle(env: DiscreteEnv, shift: RewardShift | None = None, cap: float = 2e6) -> PerfectPolicy:
    """Forward policy that satisfies trajectory balance with the uniform backward policy.

    State flows obey ``F(x) = r~(x)`` at terminals and
    ``F(s) = sum_children F(s') / |parents(s')|``; then
    ``p_F(s -> s') = F(s') / (|parents(s')| F(s))``.
    """
    shift = shift or RewardShift()
    if env.count_terminals() > cap:
        raise CapExceededError(env.count_terminals(), cap)
    log_flow: dict = {}
    table: dict = {}

    def flow(s):
        hit = log_flow.get(s)
        if hit is not None:
            return hit
        acts = env.legal_actions(s)
        logp = np.full(env.n_actions, -np.inf)
        if acts == [env.terminate]:
            value = float(shift.apply(env.log_reward(s)))
            logp[env.terminate] = 0.0
        else:
            terms = []
            for a in acts:
                child = env.apply_action(s, a)
                terms.append(flow(child) - np.log(env.n_parents(child)))
            terms = np.array(terms)
            top = terms.max()
            value = float(top + np.log(np.exp(terms - top).sum()))
            logp[acts] = terms - value
        log_flow[s] = value
        table[s] = logp
        return value

    log_z = flow(env.initial_state())
    return PerfectPolicy(TablePolicy(env, table), log_z, log_flow)
