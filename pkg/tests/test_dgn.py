import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cogcbt.dgn import (
    TrainConfig,
    cbt_from_embeddings,
    centeredness_loss,
    ecc_forward,
    init_network,
    initial_features,
    loss_gradients,
    network_from_dict,
    network_to_dict,
    train_dgn,
)
from cogcbt.errors import DimensionError, SchemaError
from cogcbt.graphdata import MultiViewNetwork, Population, compute_view_normalizers, generate_synthetic_population
from oracles import cbt_tensor_pipeline, ecc_loop, kink_margin, loss_accumulation


def random_subject(rng, n_r, n_v, sid="s"):
    a = rng.uniform(0.1, 1.0, size=(n_v, n_r, n_r))
    a = 0.5 * (a + a.transpose(0, 2, 1))
    for v in a:
        np.fill_diagonal(v, 0.0)
    return MultiViewNetwork(a, sid)


def zero_network(n_v, dims):
    net = init_network(n_v, dims)
    for layer in net.layers:
        for k in layer:
            layer[k][...] = 0.0
    return net


def fd_gradients(net, subject, subset, lambdas, h=1e-5):
    out = []
    for layer in net.layers:
        g = {}
        for name, arr in layer.items():
            ga = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = centeredness_loss(cbt_from_embeddings(ecc_forward(net, subject)), subset, lambdas)
                arr[idx] = old - h
                down = centeredness_loss(cbt_from_embeddings(ecc_forward(net, subject)), subset, lambdas)
                arr[idx] = old
                ga[idx] = (up - down) / (2 * h)
            g[name] = ga
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-4):
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        assert ga.keys() == gn.keys()
        for k in ga:
            denom = np.maximum(np.maximum(np.abs(ga[k]), np.abs(gn[k])), floor)
            worst = max(worst, float(np.max(np.abs(ga[k] - gn[k]) / denom)))
    return worst


class TestForward:
    def test_zero_parameters(self):
        net = zero_network(2, (1, 3))
        subj = random_subject(np.random.default_rng(0), 4, 2)
        np.testing.assert_array_equal(ecc_forward(net, subj), np.zeros((4, 3)))

    def test_identity_self_term(self):
        net = zero_network(2, (3, 3))
        net.layers[0]["theta"][...] = np.eye(3)
        feats = np.random.default_rng(1).normal(size=(5, 3))
        subj = random_subject(np.random.default_rng(0), 5, 2)
        np.testing.assert_array_equal(ecc_forward(net, subj, feats), feats)

    def test_loop_oracle_small(self):
        rng = np.random.default_rng(2)
        net = init_network(1, (1, 1), seed=5)
        subj = random_subject(rng, 3, 1)
        np.testing.assert_allclose(ecc_forward(net, subj), ecc_loop(net, subj.views, np.ones((3, 1))), atol=1e-12)

    @pytest.mark.parametrize("hidden", [0, 3])
    def test_loop_oracle_deep(self, hidden):
        rng = np.random.default_rng(3)
        net = init_network(3, (2, 4, 3, 2), filter_hidden=hidden, seed=1)
        subj = random_subject(rng, 6, 3)
        feats = rng.normal(size=(6, 2))
        np.testing.assert_allclose(ecc_forward(net, subj, feats), ecc_loop(net, subj.views, feats), atol=1e-12)

    def test_bias_is_divided_by_neighbour_count(self):
        net = zero_network(1, (1, 1))
        net.layers[0]["bias"][...] = 6.0
        subj = random_subject(np.random.default_rng(0), 4, 1)
        np.testing.assert_allclose(ecc_forward(net, subj), np.full((4, 1), 2.0))

    def test_shape_errors(self):
        net = init_network(2, (1, 3))
        with pytest.raises(DimensionError):
            ecc_forward(net, random_subject(np.random.default_rng(0), 4, 3))
        with pytest.raises(DimensionError):
            ecc_forward(net, random_subject(np.random.default_rng(0), 4, 2), np.ones((4, 2)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.permutations(range(6)))
    def test_permutation_equivariance(self, seed, perm):
        rng = np.random.default_rng(seed)
        net = init_network(2, (2, 4, 3), seed=seed)
        subj = random_subject(rng, 6, 2)
        feats = rng.normal(size=(6, 2))
        p = np.array(perm)
        permuted = MultiViewNetwork(subj.views[:, p][:, :, p], "p")
        np.testing.assert_allclose(ecc_forward(net, permuted, feats[p]), ecc_forward(net, subj, feats)[p], atol=1e-12)


class TestCbt:
    def test_identical_rows(self):
        np.testing.assert_array_equal(cbt_from_embeddings(np.ones((4, 3))), np.zeros((4, 4)))

    def test_worked_example(self):
        np.testing.assert_array_equal(cbt_from_embeddings([[0.0], [1.0], [3.0]]), [[0, 1, 3], [1, 0, 2], [3, 2, 0]])

    def test_tensor_pipeline_oracle(self):
        v = np.random.default_rng(0).normal(size=(7, 4))
        np.testing.assert_allclose(cbt_from_embeddings(v), cbt_tensor_pipeline(v), atol=1e-14)

    def test_needs_two_rows(self):
        with pytest.raises(DimensionError):
            cbt_from_embeddings(np.ones((1, 3)))

    @given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 4)), elements=st.floats(-100, 100)))
    def test_pseudometric(self, v):
        c = cbt_from_embeddings(v)
        assert np.array_equal(c, c.T)
        assert np.all(c >= 0) and np.all(np.diag(c) == 0)
        slack = 1e-12 * (1 + np.abs(c).max())
        assert np.all(c[:, None, :] <= c[:, :, None] + c[None, :, :] + slack)


class TestLoss:
    def test_exact_match_is_zero(self):
        subj = random_subject(np.random.default_rng(0), 5, 1)
        assert centeredness_loss(subj.views[0], [subj], [1.0]) == 0.0

    def test_zero_template(self):
        subj = random_subject(np.random.default_rng(0), 5, 1)
        assert centeredness_loss(np.zeros((5, 5)), [subj], [1.0]) == pytest.approx(np.linalg.norm(subj.views[0]), rel=1e-15)

    def test_accumulation_oracle(self):
        rng = np.random.default_rng(1)
        subset = [random_subject(rng, 5, 2, "a"), random_subject(rng, 5, 2, "b")]
        cbt, lam = rng.uniform(size=(5, 5)), np.array([1.0, 0.3])
        expected = loss_accumulation(cbt, [s.views for s in subset], lam)
        assert centeredness_loss(cbt, subset, lam) == pytest.approx(expected, abs=1e-12)

    def test_order_invariant(self):
        rng = np.random.default_rng(2)
        subset = [random_subject(rng, 4, 2, str(i)) for i in range(4)]
        cbt = rng.uniform(size=(4, 4))
        a = centeredness_loss(cbt, subset, [1.0, 0.5])
        b = centeredness_loss(cbt, subset[::-1], [1.0, 0.5])
        assert a == pytest.approx(b, rel=1e-14)

    def test_shape_mismatch(self):
        subj = random_subject(np.random.default_rng(0), 5, 2)
        with pytest.raises(DimensionError):
            centeredness_loss(np.zeros((5, 5)), [subj], [1.0])
        with pytest.raises(DimensionError):
            centeredness_loss(np.zeros((4, 4)), [subj], [1.0, 1.0])


class TestGradients:
    def test_zero_network_zero_targets(self):
        net = zero_network(2, (1, 3, 2))
        subj = random_subject(np.random.default_rng(0), 4, 2)
        target = MultiViewNetwork(np.zeros((2, 4, 4)), "z")
        for layer in loss_gradients(net, subj, [target], [1.0, 1.0]):
            for g in layer.values():
                np.testing.assert_array_equal(g, 0.0)

    @pytest.mark.parametrize("hidden", [0, 3])
    def test_finite_differences(self, hidden):
        rng = np.random.default_rng(10 + hidden)
        for seed in range(100):
            net = init_network(2, (1, 2, 3, 2), filter_hidden=hidden, seed=seed)
            subj = random_subject(rng, 5, 2)
            if kink_margin(net, subj.views, initial_features(5)) > 1e-3:
                break
        subset = [random_subject(rng, 5, 2, str(i)) for i in range(3)]
        lam = np.array([1.0, 0.6])
        err = max_relative_error(loss_gradients(net, subj, subset, lam), fd_gradients(net, subj, subset, lam))
        assert err < 1e-4

    def test_duplicate_subset_doubles(self):
        rng = np.random.default_rng(4)
        net = init_network(2, (1, 3, 2), seed=2)
        subj = random_subject(rng, 5, 2)
        subset = [random_subject(rng, 5, 2, str(i)) for i in range(2)]
        single = loss_gradients(net, subj, subset, [1.0, 1.0])
        double = loss_gradients(net, subj, subset + subset, [1.0, 1.0])
        for a, b in zip(single, double):
            for k in a:
                np.testing.assert_allclose(b[k], 2 * a[k], rtol=1e-14, atol=1e-15)

    def test_shapes_match_parameters(self):
        net = init_network(3, (1, 4, 2), filter_hidden=2)
        rng = np.random.default_rng(0)
        grads = loss_gradients(net, random_subject(rng, 5, 3), [random_subject(rng, 5, 3)], [1, 1, 1])
        for layer, g in zip(net.layers, grads):
            assert {k: v.shape for k, v in layer.items()} == {k: v.shape for k, v in g.items()}


def identical_population(n_s=6, n_r=6, n_v=2):
    base = generate_synthetic_population(1, n_r, n_v, classes=1, noise_sigma=0.0, seed=0).subjects[0]
    return Population([MultiViewNetwork(base.views.copy(), f"s{i}") for i in range(n_s)])


class TestTraining:
    def test_zero_noise_improves(self):
        pop = identical_population()
        cfg = TrainConfig(epochs=40, subset_size=3, layer_dims=(1, 8, 4))
        result = train_dgn(pop, cfg)
        lam = compute_view_normalizers(pop)
        target = (pop.subjects[0].views * lam[:, None, None]).mean(axis=0)
        init_cbt = cbt_from_embeddings(ecc_forward(init_network(2, cfg.layer_dims, seed=cfg.seed), pop.subjects[0]))
        final_cbt = result.cbts["s0"]
        assert np.linalg.norm(final_cbt - target) < np.linalg.norm(init_cbt - target)
        best = np.minimum.accumulate([r["gnn_loss"] for r in result.trace])
        assert np.all(np.diff(best) <= 0)
        assert result.trace[result.best_epoch]["gnn_loss"] == best[-1]

    def test_zero_epochs_returns_initial_network(self):
        pop = identical_population()
        cfg = TrainConfig(epochs=0, subset_size=3, layer_dims=(1, 4, 2), seed=3)
        result = train_dgn(pop, cfg)
        init = init_network(2, cfg.layer_dims, seed=3)
        for a, b in zip(result.network.layers, init.layers):
            for k in a:
                np.testing.assert_array_equal(a[k], b[k])
        assert result.best_epoch == 0 and len(result.trace) == 1

    def test_deterministic_trace(self, small_pop):
        cfg = TrainConfig(epochs=5, subset_size=4, layer_dims=(1, 6, 3), seed=11)
        a, b = train_dgn(small_pop, cfg), train_dgn(small_pop, cfg)
        assert [r["gnn_loss"] for r in a.trace] == [r["gnn_loss"] for r in b.trace]

    def test_early_stop(self, small_pop):
        cfg = TrainConfig(epochs=200, subset_size=4, layer_dims=(1, 4, 2), learning_rate=0.5, early_stop_patience=3)
        result = train_dgn(small_pop, cfg)
        assert result.trace[-1]["epoch"] - result.best_epoch == 3 or result.trace[-1]["epoch"] == 200

    def test_subset_clamped(self, small_pop, caplog):
        result = train_dgn(small_pop, TrainConfig(epochs=1, subset_size=50, layer_dims=(1, 3)))
        assert len(result.trace) == 2
        assert "subset size" in caplog.text

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self):
        net = init_network(3, (1, 5, 2), filter_hidden=4, seed=8)
        back = network_from_dict(network_to_dict(net, TrainConfig()))
        assert back.layer_dims == net.layer_dims and back.filter_hidden == 4
        for a, b in zip(net.layers, back.layers):
            for k in a:
                assert a[k].tobytes() == b[k].tobytes()

    def test_bad_version(self):
        d = network_to_dict(init_network(1, (1, 2)))
        d["format_version"] = 99
        with pytest.raises(SchemaError):
            network_from_dict(d)

    def test_missing_key(self):
        d = network_to_dict(init_network(1, (1, 2)))
        del d["layers"]
        with pytest.raises(SchemaError):
            network_from_dict(d)
