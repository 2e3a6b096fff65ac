import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfndiv import autodiff as ad
from gfndiv import exact
from gfndiv.autodiff import Node, ParamStore
from gfndiv.envs import SetEnv
from gfndiv.errors import ConfigurationError, UsageError
from gfndiv.objectives import DivergenceSpec, RewardShift, estimate, log_g
from gfndiv.policies import make_policy
from gfndiv.sampler import sample_forward
from gfndiv.varred import (
    CV_OFF,
    CV_ON,
    CVConfig,
    baseline_hat,
    cv_combine,
    cv_first_term,
    loo_centered,
    loo_direct,
    loo_estimate,
    loo_surrogate,
    per_trajectory_scores,
    trace_of_covariance,
    variance_trace,
)

from fixtures import random_tabular


class TestBaseline:
    def test_collinear(self):
        v = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(baseline_hat(v, 2 * v, epsilon=1e-300), 2.0, rtol=1e-15)

    def test_orthogonal(self):
        assert baseline_hat([1.0, 0.0], [0.0, 5.0]) == 0.0

    def test_reverse_kl_close_to_one(self):
        v = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(baseline_hat(v, v), (v @ v) / (1e-8 + v @ v), rtol=1e-15)
        np.testing.assert_allclose(baseline_hat(v, v), 1.0, atol=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            baseline_hat(np.ones(2), np.ones(3))

    def test_epsilon_positive(self):
        with pytest.raises(ConfigurationError):
            CVConfig(epsilon=0.0)


class TestControlVariate:
    def test_zero_baseline_plain_mean(self):
        rng = np.random.default_rng(0)
        fg = rng.normal(size=(5, 3))
        np.testing.assert_allclose(cv_first_term(fg, rng.normal(size=(5, 3)), CV_OFF), fg.mean(axis=0), rtol=1e-15)

    def test_reverse_kl_cancellation(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=(16, 10))
        out = cv_first_term(scores, scores, CV_ON)
        assert np.linalg.norm(out) <= 1e-10 * np.linalg.norm(scores.sum(axis=0))

    def test_cv_combine_reports_baseline(self):
        v = np.array([1.0, 2.0])
        vec, a = cv_combine(3 * v, v, 4, CVConfig(epsilon=1e-300))
        np.testing.assert_allclose(a, 3.0)
        np.testing.assert_allclose(vec, 0.0, atol=1e-15)


def per_trajectory_g_grads(en, store, alpha):
    """Rows grad g_n = (alpha - 1) g_n grad log p_F(tau_n) on an enumeration."""
    lg = log_g(en.batch, alpha)
    scores = per_trajectory_scores(en.log_pf, store)
    return (alpha - 1.0) * np.exp(lg.value)[:, None] * scores, scores


@pytest.mark.property
class TestControlVariateExpectation:
    @pytest.mark.parametrize("a_fixed", [-1.5, 0.0, 0.7, 3.0])
    def test_fixed_baseline_unbiased(self, a_fixed):
        env = SetEnv(4, 2, [0.3, -0.5, 0.8, 0.1])
        store, policy = random_tabular(env, 0)
        en = exact.enumerate_trajectories(env, policy)
        fg, scores = per_trajectory_g_grads(en, store, 0.5)
        with_cv = exact.expectation(en, fg - a_fixed * scores)
        np.testing.assert_allclose(with_cv, exact.expectation(en, fg), atol=1e-8)

    def test_optimal_baseline_gap_reported(self):
        env = SetEnv(4, 2, [0.3, -0.5, 0.8, 0.1])
        store, policy = random_tabular(env, 0)
        en = exact.enumerate_trajectories(env, policy)
        fg, scores = per_trajectory_g_grads(en, store, 0.5)
        centered = fg - exact.expectation(en, fg)
        a_star = exact.expectation(en, np.sum(scores * centered, axis=1)) / exact.expectation(en, np.sum(scores**2, axis=1))
        hats = []
        for seed in range(200):
            batch = sample_forward(env, policy, 16, seed)
            lg = log_g(batch, 0.5)
            s = per_trajectory_scores(batch.log_pf, store)
            g_rows = -0.5 * np.exp(lg.value)[:, None] * s
            hats.append(baseline_hat(s.sum(axis=0), g_rows.sum(axis=0)))
        gap = float(np.mean(hats) - a_star)
        print(f"optimal baseline {a_star:.6f}, mean batch baseline {np.mean(hats):.6f}, gap {gap:+.6f}")
        assert np.isfinite(gap)


class TestLeaveOneOut:
    def test_two_samples(self):
        scores = np.array([[1.0, 0.0], [0.5, 2.0]])
        np.testing.assert_allclose(loo_direct([1.0, 3.0], scores), scores[1] - scores[0], rtol=1e-15)

    def test_constant_f(self):
        scores = np.random.default_rng(0).normal(size=(6, 3))
        assert np.all(loo_direct(np.full(6, 2.5), scores) == 0.0)

    def test_single_sample_rejected(self):
        with pytest.raises(UsageError):
            loo_centered([1.0])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-20, 20), min_size=2, max_size=10),
        st.floats(-1e3, 1e3),
    )
    def test_shift_invariance(self, f, c):
        f = np.array(f)
        scores = np.random.default_rng(len(f)).normal(size=(len(f), 4))
        scale = (np.abs(f).max() + abs(c)) * np.finfo(float).eps * 8
        np.testing.assert_allclose(loo_direct(f + c, scores), loo_direct(f, scores), rtol=0, atol=scale * np.abs(scores).sum())

    @pytest.mark.property
    @pytest.mark.parametrize("seed", range(5))
    def test_surrogate_matches_direct(self, seed):
        env = SetEnv(5, 2, np.linspace(-1, 1, 5))
        store = ParamStore(seed)
        policy = make_policy(env, store, hidden=8)
        batch = sample_forward(env, policy, 12, seed)
        f = np.random.default_rng(seed).normal(size=12)
        via_surrogate = loo_estimate(f, batch.log_pf, store)
        direct = loo_direct(f, per_trajectory_scores(batch.log_pf, store))
        np.testing.assert_allclose(via_surrogate, direct, rtol=1e-12, atol=1e-12)

    @pytest.mark.property
    @pytest.mark.parametrize("c", [-7.0, 3.0, 1e3])
    def test_reverse_kl_loo_reward_shift(self, c):
        env = SetEnv(5, 2, np.linspace(-1, 1, 5))
        store = ParamStore(0)
        policy = make_policy(env, store, hidden=8)
        batch = sample_forward(env, policy, 12, 0)
        base = estimate(batch, store, DivergenceSpec("revkl", cv=CVConfig(False, True)), RewardShift(0.0))
        moved = estimate(batch, store, DivergenceSpec("revkl", cv=CVConfig(False, True)), RewardShift(c))
        np.testing.assert_allclose(moved.flat(store), base.flat(store), rtol=1e-9, atol=1e-12)

    def test_surrogate_value_is_not_the_target(self):
        node = loo_surrogate([1.0, 3.0], Node(np.array([0.2, 0.4]), requires_grad=True))
        np.testing.assert_allclose(node.value, 0.5 * (-2.0 * 0.2 + 2.0 * 0.4))

    @pytest.mark.slow
    def test_loo_unbiased_monte_carlo(self):
        env = SetEnv(3, 2, [1.0, 2.0, 3.0])
        store, policy = random_tabular(env, 5)
        en = exact.enumerate_trajectories(env, policy)
        f_all = en.log_pf.value - en.log_target
        target = exact.expectation(en, f_all[:, None] * per_trajectory_scores(en.log_pf, store))
        M = 10_000
        est = np.empty((M, len(target)))
        for m in range(M):
            batch = sample_forward(env, policy, 8, m, stream=5)
            f = batch.log_pf.value - batch.log_pb - batch.log_reward
            est[m] = loo_estimate(f, batch.log_pf, store)
        mean, se = est.mean(axis=0), est.std(axis=0, ddof=1) / np.sqrt(M)
        live = se > 0
        np.testing.assert_array_equal(mean[~live], target[~live])
        assert np.all(np.abs(mean[live] - target[live]) <= 4 * se[live])


class TestVarianceTrace:
    def test_deterministic_estimator(self):
        store = ParamStore(0)
        report = variance_trace(lambda spec, n, s: np.ones(3), store, None, 8, 5, np.random.default_rng(0))
        assert report.trace == 0.0
        assert (report.batch_size, report.repetitions) == (8, 5)

    def test_two_repetitions_minimum(self):
        store = ParamStore(0)
        est = lambda spec, n, s: np.random.default_rng(s).normal(size=2)
        assert variance_trace(est, store, None, 4, 2, np.random.default_rng(0)).trace >= 0.0
        with pytest.raises(UsageError):
            variance_trace(est, store, None, 4, 1, np.random.default_rng(0))

    def test_parameter_change_detected(self):
        store = ParamStore(0)
        store.param("w", (2,))

        def meddling(spec, n, s):
            store.blocks["w"].value = store.blocks["w"].value + 1.0
            return np.zeros(2)

        with pytest.raises(UsageError):
            variance_trace(meddling, store, None, 4, 3, np.random.default_rng(0))

    def test_trace_of_covariance(self):
        x = np.array([[1.0, 0.0], [3.0, 2.0]])
        np.testing.assert_allclose(trace_of_covariance(x), 2.0 + 2.0)

    def test_doubling_batch_halves_trace(self):
        env = SetEnv(6, 3, np.linspace(-1, 1, 6))
        store = ParamStore(0)
        policy = make_policy(env, store, hidden=16)
        sample_forward(env, policy, 1, 0)
        spec = DivergenceSpec("revkl", cv=CV_OFF)

        def est(spec, n, seed):
            return estimate(sample_forward(env, policy, n, seed), store, spec).flat(store)

        small = variance_trace(est, store, spec, 16, 200, np.random.default_rng(0)).trace
        large = variance_trace(est, store, spec, 32, 200, np.random.default_rng(1)).trace
        assert abs(large / small - 0.5) <= 0.2 * 0.5

    @pytest.mark.property
    def test_cv_reduces_variance_batch_64(self):
        rng = np.random.default_rng(0)
        env = SetEnv(12, 6, rng.uniform(-1, 1, 12))
        store = ParamStore(0)
        policy = make_policy(env, store)
        shift = RewardShift.calibrate(sample_forward(env, policy, 128, 0).log_reward)

        def est(spec, n, seed):
            return estimate(sample_forward(env, policy, n, seed), store, spec, shift).flat(store)

        on = variance_trace(est, store, DivergenceSpec("revkl", cv=CV_ON), 64, 100, np.random.default_rng(1)).trace
        off = variance_trace(est, store, DivergenceSpec("revkl", cv=CV_OFF), 64, 100, np.random.default_rng(1)).trace
        assert on <= off
