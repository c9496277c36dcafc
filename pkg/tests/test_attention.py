"""Linear-attention operator vs dense oracles, state caching, gradients."""

import numpy as np
import pytest

from latentmp import autodiff as ad
from latentmp.autodiff import Tensor
from latentmp.attention import (LayerParams, SampleConfig, edge_probability,
                                expand_adjacency, kernelized_attention,
                                kernelized_gumbel_attention, layer_forward,
                                network_forward, relational_bias)
from latentmp.gumbel import gumbel_from_uniform
from latentmp.kernels import sample_projection
from latentmp.oracle import dense_edge_probability, dense_gumbel_attention, dense_softmax_attention
from latentmp.trainer import TrainConfig, init_params, sample_model_projections

from util import network_gradcheck, unit_rows


def det_config(tau=1.0, m=64):
    return SampleConfig(num_samples=1, tau=tau, num_features=m,
                        deterministic=True, temperature_only=True)


def seed_averaged_attention(Q, K, V, m, n_seeds, draws=None, tau=1.0):
    """Kernelized output averaged over independent projection seeds."""
    outs = []
    for s in range(n_seeds):
        proj = sample_projection(Q.shape[1], m, seed=s)
        if draws is None:
            out = kernelized_attention(Q, K, V, proj)
        else:
            sc = SampleConfig(num_samples=1, tau=tau, num_features=m)
            out = kernelized_gumbel_attention(Q, K, V, proj, sc, gumbel_draws=draws)
        outs.append(out.data)
    return np.mean(outs, axis=0)


class TestKernelizedAttention:
    def test_single_node_returns_value_row(self):
        rng = np.random.default_rng(0)
        proj = sample_projection(3, 32, seed=0)
        V = rng.standard_normal((1, 4))
        out = kernelized_attention(rng.standard_normal((1, 3)),
                                   rng.standard_normal((1, 3)), V, proj)
        assert np.allclose(out.data, V, atol=1e-12)

    def test_identical_keys_mean_of_values(self):
        rng = np.random.default_rng(1)
        proj = sample_projection(3, 64, seed=1)
        Q = rng.standard_normal((6, 3))
        K = np.tile(rng.standard_normal(3), (6, 1))
        V = rng.standard_normal((6, 4))
        out = kernelized_attention(Q, K, V, proj)
        assert np.allclose(out.data, V.mean(axis=0), atol=1e-10)

    def test_matches_dense_oracle_seed_averaged(self):
        # stated operating point: N=32, d=4, m=4096, 20 seeds, unit-norm rows
        rng = np.random.default_rng(2)
        Q, K, V = (unit_rows(rng, 32, 4) for _ in range(3))
        approx = seed_averaged_attention(Q, K, V, m=4096, n_seeds=20)
        exact = dense_softmax_attention(Q, K, V)
        assert np.max(np.abs(approx - exact)) < 0.05

    def test_non_finite_input_rejected(self):
        proj = sample_projection(2, 8, seed=0)
        bad = np.array([[np.nan, 1.0]])
        good = np.ones((1, 2))
        with pytest.raises(ValueError, match="non-finite"):
            kernelized_attention(bad, good, good, proj)


class TestKernelizedGumbelAttention:
    def test_deterministic_tau_one_equals_plain(self):
        rng = np.random.default_rng(3)
        proj = sample_projection(3, 32, seed=2)
        Q, K, V = (rng.standard_normal((5, 3)) for _ in range(3))
        sc = SampleConfig(num_samples=7, tau=1.0, num_features=32, deterministic=True)
        a = kernelized_gumbel_attention(Q, K, V, proj, sc)
        b = kernelized_attention(Q, K, V, proj)
        assert np.array_equal(a.data, b.data)

    def test_single_node_any_sample_count(self):
        rng = np.random.default_rng(4)
        proj = sample_projection(3, 16, seed=3)
        V = rng.standard_normal((1, 2))
        sc = SampleConfig(num_samples=4, tau=0.3, num_features=16)
        out = kernelized_gumbel_attention(rng.standard_normal((1, 3)),
                                          rng.standard_normal((1, 3)), V, proj,
                                          sc, gumbel_rng=np.random.default_rng(0))
        assert np.allclose(out.data, V, atol=1e-12)

    def test_matches_dense_gumbel_oracle_shared_draws(self):
        # N=16, d=4, m=4096, K=1; the same draws feed both paths
        rng = np.random.default_rng(5)
        Q, K, V = (unit_rows(rng, 16, 4) for _ in range(3))
        g = gumbel_from_uniform(rng.random(16))
        approx = seed_averaged_attention(Q, K, V, m=4096, n_seeds=20, draws=g[None, :], tau=1.0)
        exact = dense_gumbel_attention(Q, K, V, g, tau=1.0)
        assert np.max(np.abs(approx - exact)) < 0.05

    def test_sample_averaging_averages_ratios(self):
        rng = np.random.default_rng(6)
        proj = sample_projection(3, 32, seed=4)
        Q, K, V = (rng.standard_normal((4, 3)) for _ in range(3))
        draws = gumbel_from_uniform(rng.random((3, 4)))
        sc = SampleConfig(num_samples=3, tau=0.5, num_features=32)
        combined = kernelized_gumbel_attention(Q, K, V, proj, sc, gumbel_draws=draws)
        singles = [kernelized_gumbel_attention(Q, K, V, proj,
                                               SampleConfig(num_samples=1, tau=0.5, num_features=32),
                                               gumbel_draws=draws[k:k + 1]).data
                   for k in range(3)]
        assert np.allclose(combined.data, np.mean(singles, axis=0), atol=1e-12)


class TestRelationalBias:
    def test_empty_edges_zero(self):
        out = relational_bias(np.empty((0, 2), dtype=np.int64), np.ones((3, 2)), Tensor(1.0))
        assert np.array_equal(out.data, np.zeros((3, 2)))

    def test_single_edge_half_weight(self):
        V = np.array([[9.0, 9.0], [2.0, 2.0]])
        out = relational_bias(np.array([[0, 1]]), V, Tensor(0.0))  # sigmoid(0) = 0.5
        assert np.allclose(out.data, [[1.0, 1.0], [0.0, 0.0]], atol=1e-15)

    def test_large_negative_bias_switches_off(self):
        V = np.ones((2, 2))
        out = relational_bias(np.array([[0, 1]]), V, Tensor(-60.0))
        assert np.max(np.abs(out.data)) < 1e-20

    def test_out_of_range_edge_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            relational_bias(np.array([[0, 5]]), np.ones((3, 2)), Tensor(0.0))

    def test_two_hop_reachability(self):
        # path 0 -> 1 -> 2: two-hop adds (0, 2) but never self-loops
        arcs = np.array([[0, 1], [1, 2]])
        expanded = expand_adjacency(arcs, 3, order=2)
        assert {(int(a), int(b)) for a, b in expanded} == {(0, 1), (1, 2), (0, 2)}

    def test_two_hop_excludes_self_loops_and_dedups(self):
        arcs = np.array([[0, 1], [1, 0], [0, 1]])
        expanded = expand_adjacency(arcs, 2, order=2)
        assert {(int(a), int(b)) for a, b in expanded} == {(0, 1), (1, 0)}


class TestLayerForward:
    def _params(self, rng, d, heads):
        mk = lambda: Tensor(rng.standard_normal((d, d)) / np.sqrt(d), requires_grad=True)
        return LayerParams(w_q=[mk() for _ in range(heads)], w_k=[mk() for _ in range(heads)],
                           w_v=[mk() for _ in range(heads)], bias=Tensor(0.0, requires_grad=True))

    def test_single_head_no_adj_equals_plain_attention(self):
        rng = np.random.default_rng(7)
        Z = rng.standard_normal((6, 3))
        lp = self._params(rng, 3, 1)
        proj = sample_projection(3, 32, seed=5)
        out, _ = layer_forward(Z, None, lp, det_config(m=32), [proj])
        direct = kernelized_attention(ad.matmul(Tensor(Z), lp.w_q[0]),
                                      ad.matmul(Tensor(Z), lp.w_k[0]),
                                      ad.matmul(Tensor(Z), lp.w_v[0]), proj)
        assert np.array_equal(out.data, direct.data)

    def test_two_identical_heads_equal_one(self):
        rng = np.random.default_rng(8)
        Z = rng.standard_normal((5, 3))
        one = self._params(rng, 3, 1)
        two = LayerParams(w_q=one.w_q * 2, w_k=one.w_k * 2, w_v=one.w_v * 2, bias=one.bias)
        proj = sample_projection(3, 16, seed=6)
        a, _ = layer_forward(Z, None, one, det_config(m=16), [proj])
        b, _ = layer_forward(Z, None, two, det_config(m=16), [proj, proj])
        assert np.allclose(a.data, b.data, atol=1e-15)

    def test_identity_bias_zero_matches_no_adjacency(self):
        rng = np.random.default_rng(9)
        Z = rng.standard_normal((5, 3))
        lp = self._params(rng, 3, 1)
        proj = sample_projection(3, 16, seed=7)
        arcs = expand_adjacency(np.array([[0, 1], [1, 2]]), 5, 1)
        with_adj, _ = layer_forward(Z, arcs, lp, det_config(m=16), [proj],
                                    rb_activation="identity")
        without, _ = layer_forward(Z, None, lp, det_config(m=16), [proj])
        assert np.array_equal(with_adj.data, without.data)


class TestNetworkForward:
    def _setup(self, n=10, d=5, c=3, layers=2, heads=2, seed=0):
        cfg = TrainConfig(num_layers=layers, hidden_dim=8, num_heads=heads, num_features=16,
                          tau=0.5, num_samples=2, seed=seed)
        params = init_params(d, c, cfg)
        projections = sample_model_projections(cfg)
        return cfg, params, projections

    def test_shape_contract(self):
        rng = np.random.default_rng(10)
        cfg, params, projections = self._setup()
        X = rng.standard_normal((10, 5))
        logits, _ = network_forward(X, None, params, projections, cfg.sample_config(),
                                    gumbel_rng=np.random.default_rng(0))
        assert logits.data.shape == (10, 3)

    def test_zero_layers_is_feature_mlp(self):
        rng = np.random.default_rng(11)
        cfg, params, projections = self._setup(layers=0)
        X = rng.standard_normal((7, 5))
        logits, _ = network_forward(X, None, params, projections, cfg.sample_config())
        manual = ad.add(ad.matmul(ad.elu(ad.add(ad.matmul(Tensor(X), params.embed_w),
                                                params.embed_b)), params.out_w), params.out_b)
        assert np.array_equal(logits.data, manual.data)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(12)
        n = 8
        cfg, params, projections = self._setup(n=n, layers=1, heads=1)
        X = rng.standard_normal((n, 5))
        arcs = expand_adjacency(rng.integers(0, n, size=(10, 2)), n, 1)
        draws = [[gumbel_from_uniform(rng.random((2, n)))]]
        logits, _ = network_forward(X, arcs, params, projections, cfg.sample_config(),
                                    gumbel_draws=draws)

        sigma = rng.permutation(n)
        inv = np.empty(n, dtype=np.int64)
        inv[sigma] = np.arange(n)
        arcs_p = np.stack([inv[arcs[:, 0]], inv[arcs[:, 1]]], axis=1)
        draws_p = [[draws[0][0][:, sigma]]]
        logits_p, _ = network_forward(X[sigma], arcs_p, params, projections,
                                      cfg.sample_config(), gumbel_draws=draws_p)
        assert np.allclose(logits_p.data, logits.data[sigma], atol=1e-9)


class TestEdgeProbability:
    def _state(self, Q, K, m=64, seed=0, heads=1):
        n, d = Q.shape
        rng = np.random.default_rng(seed)
        lp = LayerParams(w_q=[Tensor(np.eye(d)) for _ in range(heads)],
                         w_k=[Tensor(np.eye(d)) for _ in range(heads)],
                         w_v=[Tensor(rng.standard_normal((d, d))) for _ in range(heads)],
                         bias=Tensor(0.0))
        projs = [sample_projection(d, m, seed=seed + 17 * h) for h in range(heads)]
        # identity W_Q/W_K make the cached state refer to Q and K themselves
        _, state = layer_forward(Q, None, lp, det_config(m=m), projs, collect_state=True)
        from latentmp.attention import ForwardState
        fs = ForwardState()
        fs.layers.append(state)
        return fs

    def test_single_node_probability_one(self):
        state = self._state(np.array([[0.3, -0.2]]), np.array([[0.3, -0.2]]))
        assert edge_probability(state, 0, 0, 0) == pytest.approx(1.0, abs=1e-12)

    def test_identical_keys_uniform(self):
        rng = np.random.default_rng(13)
        Q = rng.standard_normal((6, 3))
        K = np.tile(rng.standard_normal(3), (6, 1))
        state = self._state(Q, K)
        for v in range(6):
            assert edge_probability(state, 0, 2, v) == pytest.approx(1 / 6, abs=1e-10)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(14)
        Q, K = rng.standard_normal((8, 3)), rng.standard_normal((8, 3))
        state = self._state(Q, K, heads=2)
        total = sum(edge_probability(state, 0, 3, v) for v in range(8))
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_matches_dense_row_softmax_seed_averaged(self):
        rng = np.random.default_rng(15)
        Q, K = unit_rows(rng, 8, 4), unit_rows(rng, 8, 4)
        dense = dense_edge_probability(Q, K)
        acc = np.zeros((8, 8))
        n_seeds = 20
        for s in range(n_seeds):
            state = self._state(Q, K, m=4096, seed=s)
            acc += np.array([[edge_probability(state, 0, u, v) for v in range(8)]
                             for u in range(8)])
        assert np.max(np.abs(acc / n_seeds - dense)) < 0.02

    def test_missing_cache_rejected(self):
        from latentmp.attention import ForwardState
        with pytest.raises(ValueError, match="no cached state"):
            edge_probability(ForwardState(), 0, 0, 0)

    def test_cached_sum_equals_literal_summation(self):
        rng = np.random.default_rng(16)
        state = self._state(rng.standard_normal((9, 3)), rng.standard_normal((9, 3)))
        hs = state.layers[0].heads[0]
        literal = hs.phi_k.data.sum(axis=0)[:, None]
        assert np.max(np.abs(hs.key_sum.data - literal)) < 1e-10


class TestOracleConvergence:
    def test_deviation_nonincreasing_in_m(self):
        rng = np.random.default_rng(17)
        Q, K, V = (unit_rows(rng, 16, 4) for _ in range(3))
        exact = dense_softmax_attention(Q, K, V)
        medians = []
        for m in (256, 1024, 4096):
            devs = []
            for s in range(20):
                proj = sample_projection(4, m, seed=s)
                devs.append(np.max(np.abs(kernelized_attention(Q, K, V, proj).data - exact)))
            medians.append(np.median(devs))
        assert medians[0] >= medians[1] >= medians[2]


class TestEndToEndGradients:
    def test_network_gradients_match_fd(self):
        worst, coords = network_gradcheck(n=8, d_in=4, hidden=6, m=8, heads=1, layers=1)
        assert coords >= 100
        assert worst < 1e-3
