import numpy as np
import pytest

from gfndiv import autodiff as ad
from gfndiv import nets
from gfndiv.autodiff import Node, ParamStore, finite_diff_check
from gfndiv.errors import ConfigurationError

from oracles import gaussian_density



def zero_store(store):
    for node in store.blocks.values():
        node.value = np.zeros_like(node.value)


class TestMlp:
    def test_zero_weights_zero_output(self):
        store = ParamStore(0)
        spec = nets.MlpSpec(3, 2, (4,), "m")
        nets.mlp_forward(spec, store, np.ones((1, 3)))
        zero_store(store)
        np.testing.assert_array_equal(nets.mlp_forward(spec, store, np.ones((5, 3))).value, 0.0)

    def test_identity_single_layer(self):
        store = ParamStore(0)
        store.param("m.W0", (3, 3), init=lambda rng, shape: np.eye(3))
        spec = nets.MlpSpec(3, 3, (), "m")
        x = np.random.default_rng(0).normal(size=(4, 3))
        np.testing.assert_array_equal(nets.mlp_forward(spec, store, x).value, x)

    def test_deterministic_given_seed(self):
        x = np.random.default_rng(5).normal(size=(3, 6))
        spec = nets.MlpSpec(6, 2, (8, 8), "m")
        a = nets.mlp_forward(spec, ParamStore(0), x).value
        b = nets.mlp_forward(spec, ParamStore(0), x).value
        np.testing.assert_array_equal(a, b)

    def test_wrong_input_dim(self):
        with pytest.raises(ConfigurationError):
            nets.mlp_forward(nets.MlpSpec(3, 1), ParamStore(0), np.ones((1, 4)))


def deepset_fn(spec, sets):
    return lambda s: ad.sum_(ad.exp(nets.deepset_forward(spec, s, sets) * 0.3))


class TestDeepSet:
    spec = nets.DeepSetSpec(4, 3, (6,), 5, (6,), "ds")

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        elems = rng.normal(size=(5, 4))
        store = ParamStore(0)
        a = nets.deepset_forward(self.spec, store, [elems]).value
        for _ in range(10):
            b = nets.deepset_forward(self.spec, store, [elems[rng.permutation(5)]]).value
            np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)

    def test_empty_set_uses_zero_vector(self):
        store = ParamStore(0)
        nets.deepset_forward(self.spec, store, [np.ones((1, 4))])
        out = nets.deepset_forward(self.spec, store, [np.zeros((0, 4))]).value
        expected = nets.mlp_forward(self.spec.decoder_spec(), store, np.zeros((1, 5))).value
        np.testing.assert_array_equal(out, expected)

    def test_singleton_pools_to_encoder(self):
        store = ParamStore(0)
        d = np.array([[0.1, -0.3, 0.7, 0.2]])
        out = nets.deepset_forward(self.spec, store, [d]).value
        phi = ad.leaky_relu(nets.mlp_forward(self.spec.encoder_spec(), store, d)).value
        np.testing.assert_array_equal(out, nets.mlp_forward(self.spec.decoder_spec(), store, phi).value)

    def test_batched_sets_match_individual(self):
        rng = np.random.default_rng(1)
        sets = [rng.normal(size=(k, 4)) for k in (2, 0, 3)]
        store = ParamStore(0)
        nets.deepset_forward(self.spec, store, [sets[0]])
        batched = nets.deepset_forward(self.spec, store, sets).value
        for i, s in enumerate(sets):
            np.testing.assert_allclose(batched[i], nets.deepset_forward(self.spec, store, [s]).value[0], atol=1e-12)

    def test_finite_difference(self):
        seed = 0
        rng = np.random.default_rng(seed)
        sets = [rng.normal(size=(k, 4)) for k in (1, 3)]
        err = finite_diff_check(deepset_fn(self.spec, sets), ParamStore(seed), n_coords=12, rng=rng)
        assert err <= 1e-4


def relabel(features, edges, perm):
    """Node i of the new graph is node perm[i] of the old one."""
    inv = np.argsort(perm)
    return features[perm], [(inv[a], inv[b]) for a, b in edges]


class TestGin:
    spec = nets.GinSpec(5, 6, 2, "g")
    edges = [(0, 1), (0, 2), (2, 3), (2, 4), (5, 6)]

    def features(self, seed=0):
        return np.random.default_rng(seed).normal(size=(7, 5))

    def test_zero_layers_identity(self):
        spec = nets.GinSpec(5, 6, 0, "g")
        f = self.features()
        out = nets.gin_forward(spec, ParamStore(0), f, nets.forest_adjacency(7, self.edges)).value
        np.testing.assert_array_equal(out, f)

    def test_isomorphic_relabel_equivariant(self):
        store = ParamStore(0)
        f = self.features()
        out = nets.gin_forward(self.spec, store, f, nets.forest_adjacency(7, self.edges)).value
        perm = np.random.default_rng(3).permutation(7)
        f2, e2 = relabel(f, self.edges, perm)
        out2 = nets.gin_forward(self.spec, store, f2, nets.forest_adjacency(7, e2)).value
        np.testing.assert_allclose(out2, out[perm], atol=1e-9)
        roots = sorted(map(tuple, np.round(out[[0, 5]], 9)))
        roots2 = sorted(map(tuple, np.round(out2[np.argsort(perm)[[0, 5]]], 9)))
        np.testing.assert_allclose(roots, roots2, atol=1e-9)

    def test_single_node_is_mlp_chain(self):
        store = ParamStore(0)
        f = self.features()[:1]
        out = nets.gin_forward(self.spec, store, f, nets.forest_adjacency(1, [])).value
        h = f
        width = 5
        for layer in range(2):
            mlp = nets.MlpSpec(width, 6, (6,), f"g.l{layer}")
            h = ad.leaky_relu(nets.mlp_forward(mlp, store, h)).value
            width = 6
        np.testing.assert_array_equal(out, h)

    def test_pair_scores_symmetric(self):
        store = ParamStore(0)
        emb = Node(self.features())
        scorer = nets.MlpSpec(10, 1, (4,), "p")
        a = nets.pair_scores(scorer, store, emb, np.array([0, 2]), np.array([5, 6])).value
        b = nets.pair_scores(scorer, store, emb, np.array([5, 6]), np.array([0, 2])).value
        np.testing.assert_array_equal(a, b)

    def test_finite_difference(self):
        seed = 0
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(7, 5))
        A = nets.forest_adjacency(7, self.edges)
        scorer = nets.MlpSpec(12, 1, (4,), "p")

        def fn(s):
            emb = nets.gin_forward(self.spec, s, f, A)
            return ad.sum_(nets.pair_scores(scorer, s, emb, np.array([0, 0]), np.array([5, 2])))

        assert finite_diff_check(fn, ParamStore(seed), n_coords=12, rng=rng) <= 1e-4


def head_row(logits, mu, log_sd):
    return np.concatenate([logits, mu, log_sd])[None, :]


class TestMixtureHead:
    def test_standard_normal_mode(self):
        out = nets.mixture_log_density(head_row([0.0], [0.0], [0.0]), np.array([0.0])).value
        np.testing.assert_allclose(out, [-0.9189385332046727], rtol=1e-14)

    def test_duplicate_components_same_density(self):
        x = np.linspace(-3, 3, 13)
        one = nets.mixture_log_density(np.repeat(head_row([0.0], [0.4], [0.2]), 13, 0), x).value
        two = nets.mixture_log_density(np.repeat(head_row([1.0, 1.0], [0.4, 0.4], [0.2, 0.2]), 13, 0), x).value
        np.testing.assert_allclose(one, two, atol=1e-14)

    def test_matches_gaussian_oracle(self):
        head = head_row([0.2, -0.5], [1.0, -2.0], [0.1, -0.4])
        w = np.exp([0.2, -0.5]) / np.exp([0.2, -0.5]).sum()
        x = 0.3
        ref = sum(w[k] * gaussian_density([x], [m], [[np.exp(2 * s)]]) for k, (m, s) in enumerate([(1.0, 0.1), (-2.0, -0.4)]))
        np.testing.assert_allclose(nets.mixture_log_density(head, np.array([x])).value, [np.log(ref)], rtol=1e-12)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(0)
        head = head_row(rng.normal(size=8), rng.normal(size=8), rng.uniform(-1, 0.5, size=8))
        x = np.linspace(-10, 10, 20001)
        dens = np.exp(nets.mixture_log_density(np.repeat(head, len(x), 0), x).value)
        assert np.all(dens > 0)
        assert abs(np.trapezoid(dens, x) - 1.0) <= 1e-3

    def test_degenerate_width_sample(self):
        head = head_row([0.0], [5.0], [np.log(1e-6)])
        x, _ = nets.mixture_sample(head, [np.random.default_rng(0)])
        np.testing.assert_allclose(x, [5.0], atol=1e-4)

    def test_sample_mean(self):
        n = 100_000
        head = np.repeat(head_row([0.0], [2.0], [0.0]), n, 0)
        rngs = [np.random.default_rng([0, i]) for i in range(n)]
        x, _ = nets.mixture_sample(head, rngs)
        assert abs(x.mean() - 2.0) <= 0.02

    def test_sample_log_density_consistent(self):
        rng = np.random.default_rng(2)
        head = np.repeat(head_row(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3) * 0.3), 6, 0)
        x, logd = nets.mixture_sample(head, [np.random.default_rng(i) for i in range(6)])
        np.testing.assert_array_equal(logd, nets.mixture_log_density(head, x).value)

    def test_finite_difference(self):
        seed = 0
        rng = np.random.default_rng(seed)
        spec = nets.MlpSpec(4, nets.MixtureHeadSpec(3).width, (5,), "h")
        inputs = rng.normal(size=(3, 4))
        xs = rng.normal(size=3)

        def fn(s):
            return ad.sum_(nets.mixture_log_density(nets.mlp_forward(spec, s, inputs), xs))

        assert finite_diff_check(fn, ParamStore(seed), n_coords=12, rng=rng) <= 1e-4


class TestMlpFiniteDifference:
    def test_finite_difference(self):
        seed = 0
        rng = np.random.default_rng(seed)
        spec = nets.MlpSpec(5, 3, (6, 6), "m")
        x = rng.normal(size=(4, 5))
        fn = lambda s: ad.sum_(ad.log_softmax(nets.mlp_forward(spec, s, x)) * np.arange(3.0))
        assert finite_diff_check(fn, ParamStore(seed), n_coords=12, rng=rng) <= 1e-4
