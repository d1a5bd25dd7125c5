import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mloracle.errors import DimensionMismatch, NotPositiveDefinite
from mloracle.numkit import finite_diff_gradient
from mloracle.surrogates import (
    FnnModel,
    RnnCell,
    covariance_matrix,
    dumps,
    fnn_eval_and_grad,
    fnn_forward,
    gp_fit,
    gp_predict,
    gp_predict_many,
    kernel_matrix,
    kernel_se,
    loads,
    log_marginal_likelihood,
    rnn_sequence,
    rnn_sequence_grad,
    rnn_step,
)


def random_fnn(seed, activations=None):
    rng = np.random.default_rng(seed)
    sizes = [int(v) for v in rng.integers(1, 5, size=4)]
    acts = activations or [str(rng.choice(["tanh", "sigmoid", "linear"])) for _ in range(3)]
    model = FnnModel.initialize(sizes, acts, seed=seed)
    # non-zero biases so every term of the gradient is exercised
    return model.with_flat(model.flat() + 0.1 * rng.standard_normal(model.n_parameters)), rng


class TestFnn:
    def test_identity_layer(self, rng):
        model = FnnModel((3, 3), (np.eye(3),), (np.zeros(3),), ("linear",))
        f = rng.standard_normal(3)
        np.testing.assert_array_equal(model(f), f)

    def test_zero_weights(self):
        model = FnnModel((2, 3, 1), (np.zeros((3, 2)), np.zeros((1, 3))), (np.zeros(3), [0.4]), ("tanh", "tanh"))
        assert model([5.0, -1.0])[0] == pytest.approx(math.tanh(0.4), abs=1e-15)
        model = model.with_flat(np.zeros(model.n_parameters))
        assert model([5.0, -1.0])[0] == 0.0

    def test_shape_validation(self):
        with pytest.raises(DimensionMismatch):
            FnnModel((2, 1), (np.zeros((2, 1)),), (np.zeros(1),), ("linear",))
        with pytest.raises(ValueError):
            FnnModel((1, 1), (np.zeros((1, 1)),), (np.zeros(1),), ("softplus",))

    def test_feature_length_checked(self):
        model = FnnModel.initialize((2, 1), ("linear",))
        with pytest.raises(DimensionMismatch):
            model([1.0, 2.0, 3.0])

    @pytest.mark.parametrize("seed", range(10))
    def test_backprop_matches_differences(self, seed):
        model, rng = random_fnn(seed)
        f = rng.standard_normal(model.layer_sizes[0])
        target = rng.standard_normal(model.layer_sizes[-1])
        out, _ = fnn_eval_and_grad(model, f)
        _, grad = fnn_eval_and_grad(model, f, want_grad=True, upstream=out - target)

        def loss(theta):
            return 0.5 * float(np.sum((model.with_flat(theta)(f) - target) ** 2))

        fd = finite_diff_gradient(loss, model.flat())
        assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)

    def test_relu_gradient_away_from_kinks(self, rng):
        model = FnnModel.initialize((2, 5, 1), ("relu", "linear"), seed=3)
        f = np.array([0.7, -0.3])
        out, grad = fnn_eval_and_grad(model, f, want_grad=True, upstream=np.ones(1))
        fd = finite_diff_gradient(lambda th: float(model.with_flat(th)(f)[0]), model.flat())
        np.testing.assert_allclose(grad, fd, atol=1e-6)

    @given(st.integers(0, 10_000))
    def test_linear_network_is_affine(self, seed):
        model, rng = random_fnn(seed, activations=["linear"] * 3)
        w = np.eye(model.layer_sizes[0])
        b = np.zeros(model.layer_sizes[0])
        for wl, bl in zip(model.weights, model.biases):
            w, b = wl @ w, wl @ b + bl
        f = rng.standard_normal(model.layer_sizes[0])
        np.testing.assert_allclose(model(f), w @ f + b, atol=1e-10)

    def test_batch_matches_single(self, rng):
        model = FnnModel.initialize((3, 4, 2), ("tanh", "linear"), seed=1)
        batch = rng.standard_normal((6, 3))
        out = fnn_forward(model, batch)
        for row, f in zip(out, batch):
            np.testing.assert_allclose(row, model(f), atol=1e-14)


class TestRnn:
    def test_no_memory(self, rng):
        cell = RnnCell(rng.standard_normal((3, 2)), np.zeros((3, 3)), np.zeros(3), np.eye(3), np.zeros(3),
                       "linear", "linear")
        f = rng.standard_normal(2)
        _, h = rnn_step(cell, f, rng.standard_normal(3))
        np.testing.assert_allclose(h, cell.w_f @ f, atol=1e-15)

    def test_running_sum(self):
        cell = RnnCell([[1.0]], [[1.0]], [0.0], [[1.0]], [0.0], "linear", "linear")
        outs, hiddens = rnn_sequence(cell, [[1.0], [1.0], [1.0]])
        np.testing.assert_array_equal(hiddens[:, 0], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(outs[:, 0], [1.0, 2.0, 3.0])

    @pytest.mark.parametrize("seed", range(10))
    def test_unrolled_gradient(self, seed):
        rng = np.random.default_rng(seed)
        n_f, n_h, n_l, n = (int(v) for v in rng.integers(1, 4, size=4))
        cell = RnnCell.initialize(n_f, n_h, n_l, "tanh", str(rng.choice(["linear", "sigmoid"])), seed=seed)
        cell = cell.with_flat(cell.flat() + 0.1 * rng.standard_normal(cell.flat().size))
        fs = rng.standard_normal((n + 2, n_f))
        targets = rng.standard_normal((n + 2, n_l))
        outs, _ = rnn_sequence(cell, fs)
        _, grad = rnn_sequence_grad(cell, fs, outs - targets)

        def loss(theta):
            return 0.5 * float(np.sum((rnn_sequence(cell.with_flat(theta), fs)[0] - targets) ** 2))

        fd = finite_diff_gradient(loss, cell.flat())
        assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)

    def test_memoryless_cell_is_pointwise_network(self, rng):
        cell = RnnCell.initialize(2, 3, 1, "tanh", "linear", seed=4)
        cell = cell.with_flat(np.where(np.isin(np.arange(cell.flat().size), range(6, 15)), 0.0, cell.flat()))
        assert not np.any(cell.w_h)
        net = FnnModel((2, 3, 1), (cell.w_f, cell.w_l), (cell.b_h, cell.b_l), ("tanh", "linear"))
        fs = rng.standard_normal((5, 2))
        outs, _ = rnn_sequence(cell, fs)
        for out, f in zip(outs, fs):
            assert np.array_equal(out, net(f))

    def test_dimension_checks(self):
        cell = RnnCell.initialize(2, 3, 1)
        with pytest.raises(DimensionMismatch):
            rnn_step(cell, [1.0], np.zeros(3))
        with pytest.raises(DimensionMismatch):
            RnnCell(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros(3), np.zeros((1, 3)), np.zeros(1))


class TestKernel:
    def test_zero_distance(self):
        assert kernel_se([0.3, 1.0], [0.3, 1.0], 2.5, 0.7) == 2.5

    def test_value(self):
        assert kernel_se([0.0], [1.0], 1.0, 2.0) == pytest.approx(math.exp(-0.5), abs=1e-12)

    @given(
        st.lists(st.floats(-10, 10), min_size=3, max_size=3),
        st.lists(st.floats(-10, 10), min_size=3, max_size=3),
        st.floats(0.01, 10),
        st.floats(0.01, 10),
    )
    def test_symmetric_and_bounded(self, a, b, h1, h2):
        k = kernel_se(a, b, h1, h2)
        assert k == kernel_se(b, a, h1, h2)
        assert 0.0 <= k <= kernel_se(a, a, h1, h2)

    def test_matrix_matches_pointwise(self, rng):
        a, b = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
        k = kernel_matrix(a, b, 1.3, 0.8)
        for i in range(4):
            for j in range(3):
                assert k[i, j] == pytest.approx(kernel_se(a[i], b[j], 1.3, 0.8), rel=1e-14)


class TestGp:
    def test_single_point(self):
        gp = gp_fit([[0.5]], [3.0], h1=2.0, h2=1.0, nu=0.5)
        np.testing.assert_allclose(gp.lower @ gp.lower.T, [[2.5]])
        assert gp.alpha[0] == pytest.approx(3.0 / 2.5, rel=1e-15)

    def test_duplicates_take_jitter_path(self):
        gp = gp_fit([[1.0], [1.0]], [0.0, 0.0], nu=0.0)
        assert gp.jitter > 0.0

    def test_failure_after_jitter(self):
        # three coincident points with a huge amplitude swamp the small jitter
        with pytest.raises(NotPositiveDefinite):
            gp_fit([[1.0], [1.0], [1.0]], [0.0, 0.0, 0.0], h1=1e12, nu=0.0)

    def test_cache_consistency(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 20))
            x = rng.uniform(-3, 3, size=(n, 1))
            y = rng.standard_normal(n)
            gp = gp_fit(x, y, 1.0, 0.5, 1e-6)
            k = covariance_matrix(x, 1.0, 0.5, 1e-6 + gp.jitter)
            assert np.linalg.norm(k @ gp.alpha - y) <= 1e-8

    def test_interpolates_training_points(self, rng):
        x = np.linspace(-2, 2, 7)[:, None]
        y = np.sin(x[:, 0])
        gp = gp_fit(x, y, 1.0, 1.0, 1e-12)
        for xi, yi in zip(x, y):
            mean, var = gp_predict(gp, xi)
            assert abs(mean - yi) <= 1e-5
            assert var <= 1e-6

    def test_prior_far_away(self, rng):
        gp = gp_fit(rng.standard_normal((5, 2)), rng.standard_normal(5), 1.7, 0.3, 1e-4)
        mean, var = gp_predict(gp, [100.0, 100.0])
        assert abs(mean) <= 1e-6
        assert abs(var - 1.7) <= 1e-6

    def test_mirror_symmetry(self):
        gp = gp_fit([[-1.0], [1.0]], [0.4, 0.4], 1.0, 1.0, 1e-3)
        for q in (0.3, 1.7, 4.0):
            assert gp_predict(gp, [q])[0] == pytest.approx(gp_predict(gp, [-q])[0], abs=1e-12)

    def test_variance_in_range(self, rng):
        for _ in range(10):
            h1, nu = rng.uniform(0.1, 3), rng.uniform(1e-6, 0.1)
            gp = gp_fit(rng.uniform(-2, 2, (8, 2)), rng.standard_normal(8), h1, rng.uniform(0.1, 2), nu)
            _, var = gp_predict_many(gp, rng.uniform(-4, 4, (1000, 2)))
            assert np.all(var >= 0.0) and np.all(var <= h1 + nu)

    def test_mean_linear_in_labels(self, rng):
        x = rng.standard_normal((6, 1))
        a, b = rng.standard_normal(6), rng.standard_normal(6)
        q = rng.standard_normal((20, 1))
        ma = gp_predict_many(gp_fit(x, a, 1.0, 1.0, 1e-3), q)[0]
        mb = gp_predict_many(gp_fit(x, b, 1.0, 1.0, 1e-3), q)[0]
        mab = gp_predict_many(gp_fit(x, a + b, 1.0, 1.0, 1e-3), q)[0]
        np.testing.assert_allclose(mab, ma + mb, atol=1e-9)

    def test_query_dimension(self):
        gp = gp_fit([[0.0, 1.0]], [1.0])
        with pytest.raises(DimensionMismatch):
            gp_predict(gp, [0.0])

    def test_evidence_gradient(self, rng):
        x = rng.standard_normal((8, 1))
        y = np.sin(2 * x[:, 0])
        w = np.log([0.8, 0.6, 0.05])
        _, grad = log_marginal_likelihood(x, y, *np.exp(w), with_grad=True)
        fd = finite_diff_gradient(lambda v: log_marginal_likelihood(x, y, *np.exp(v)), w)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)

    def test_evidence_single_point(self):
        # N(0, h1 + nu) density at the label
        lml = log_marginal_likelihood([[0.0]], [1.0], 1.0, 1.0, 1.0)
        assert lml == pytest.approx(-0.25 - 0.5 * math.log(2.0) - 0.5 * math.log(2 * math.pi), rel=1e-14)


class TestSerialization:
    def test_fnn_round_trip(self):
        model = FnnModel.initialize((3, 5, 2), ("tanh", "sigmoid"), seed=9)
        back = loads(dumps(model))
        assert np.array_equal(back.flat(), model.flat())
        assert back.activations == model.activations

    def test_rnn_round_trip(self):
        cell = RnnCell.initialize(2, 3, 1, "tanh", "linear", seed=2)
        back = loads(dumps(cell))
        assert np.array_equal(back.flat(), cell.flat())

    def test_gp_round_trip(self, rng):
        gp = gp_fit(rng.standard_normal((4, 2)), rng.standard_normal(4), 1.1, 0.9, 1e-3)
        back = loads(dumps(gp))
        q = rng.standard_normal((5, 2))
        for a, b in zip(gp_predict_many(gp, q), gp_predict_many(back, q)):
            assert np.array_equal(a, b)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            loads('{"kind": "svm"}')
        with pytest.raises(TypeError):
            dumps(object())
