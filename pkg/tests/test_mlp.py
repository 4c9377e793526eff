import numpy as np
import pytest

import bias_meter as bm
from bias_meter.errors import NumericalError
from bias_meter.mlp import mse_loss, mse_loss_and_grads


def linear_dataset(seed=0, n=200, dim=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, dim))
    W = rng.normal(size=(dim, 1))
    Y = X @ W + 0.5
    return bm.Dataset(X, Y, X[: n // 4], Y[: n // 4], name="linear")


class TestInit:
    def test_deterministic_per_seed(self):
        arch = bm.MlpArch(4, 2, hidden_width=8, hidden_layers=2)
        a = bm.init_mlp(arch, seed=5)
        b = bm.init_mlp(arch, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        assert all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))

    def test_different_seeds_differ(self):
        arch = bm.MlpArch(4, 2, hidden_width=8, hidden_layers=2)
        a = bm.init_mlp(arch, seed=5)
        c = bm.init_mlp(arch, seed=6)
        assert not np.array_equal(a.weights[0], c.weights[0])

    def test_biases_zero_and_weights_in_glorot_range(self):
        arch = bm.MlpArch(10, 3, hidden_width=16, hidden_layers=2)
        params = bm.init_mlp(arch, seed=0)
        for b in params.biases:
            assert np.array_equal(b, np.zeros_like(b))
        for W in params.weights:
            limit = np.sqrt(6.0 / sum(W.shape))
            assert np.abs(W).max() <= limit

    def test_weight_mean_near_zero(self):
        arch = bm.MlpArch(320, 1, hidden_width=320, hidden_layers=1)
        params = bm.init_mlp(arch, seed=1)
        flat = np.concatenate([w.ravel() for w in params.weights])
        assert flat.size >= 100_000
        limit = np.sqrt(6.0 / 640.0)
        stderr = (limit / np.sqrt(3.0)) / np.sqrt(flat.size)
        assert abs(flat.mean()) <= 3.0 * stderr


class TestForward:
    def test_zero_params_give_zero(self):
        arch = bm.MlpArch(3, 2, hidden_width=4, hidden_layers=2)
        params = bm.init_mlp(arch, seed=0)
        for w in params.weights:
            w[:] = 0.0
        out = bm.mlp_forward(params, np.ones((5, 3)))
        assert np.array_equal(out, np.zeros((5, 2)))

    def test_single_identity_layer_is_identity(self):
        params = bm.MlpParams([np.eye(3)], [np.zeros(3)])
        X = np.random.default_rng(2).normal(size=(4, 3))
        assert np.array_equal(bm.mlp_forward(params, X), X)

    def test_matches_reference_two_layer_net(self):
        rng = np.random.default_rng(3)
        W1, b1 = rng.normal(size=(4, 6)), rng.normal(size=6)
        W2, b2 = rng.normal(size=(6, 2)), rng.normal(size=2)
        params = bm.MlpParams([W1, W2], [b1, b2])
        X = rng.normal(size=(7, 4))
        expected = np.maximum(X @ W1 + b1, 0.0) @ W2 + b2
        np.testing.assert_allclose(bm.mlp_forward(params, X), expected, rtol=1e-12)

    def test_shape_mismatch(self):
        params = bm.init_mlp(bm.MlpArch(3, 1), seed=0)
        with pytest.raises(ValueError, match="width"):
            bm.mlp_forward(params, np.zeros((2, 4)))


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_central_differences(self, seed):
        arch = bm.MlpArch(4, 2, hidden_width=8, hidden_layers=3)
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(10, 4))
        Y = rng.normal(size=(10, 2))
        params = bm.init_mlp(arch, seed=seed + 100)
        _, grads = mse_loss_and_grads(params, X, Y)
        h = 1e-5
        for arrays, garrays in ((params.weights, grads.weights), (params.biases, grads.biases)):
            for arr, garr in zip(arrays, garrays):
                flat, gflat = arr.ravel(), garr.ravel()
                for idx in range(0, flat.size, max(1, flat.size // 10)):
                    orig = flat[idx]
                    flat[idx] = orig + h
                    up = mse_loss(params, X, Y)
                    flat[idx] = orig - h
                    down = mse_loss(params, X, Y)
                    flat[idx] = orig
                    fd = (up - down) / (2.0 * h)
                    assert abs(fd - gflat[idx]) <= 1e-4 * max(abs(fd), abs(gflat[idx]), 1e-8)

    def test_permutation_symmetry(self):
        arch = bm.MlpArch(3, 2, hidden_width=6, hidden_layers=2)
        params = bm.init_mlp(arch, seed=7)
        X = np.random.default_rng(8).normal(size=(9, 3))
        base = bm.mlp_forward(params, X)
        perm = np.random.default_rng(9).permutation(6)
        permuted = params.copy()
        permuted.weights[0] = permuted.weights[0][:, perm]
        permuted.biases[0] = permuted.biases[0][perm]
        permuted.weights[1] = permuted.weights[1][perm, :]
        np.testing.assert_allclose(bm.mlp_forward(permuted, X), base, atol=1e-12)


class TestTrain:
    def test_zero_lr_leaves_params_unchanged(self):
        data = linear_dataset()
        params = bm.init_mlp(bm.MlpArch(3, 1, hidden_width=4, hidden_layers=1), seed=0)
        cfg = bm.TrainConfig(lr=0.0, epochs=3, batch_size=32, seed=0)
        trained = bm.train_mlp(params, data, cfg)
        assert all(np.array_equal(a, b) for a, b in zip(params.weights, trained.weights))
        assert all(np.array_equal(a, b) for a, b in zip(params.biases, trained.biases))

    def test_linear_net_fits_linear_data(self):
        # A single affine layer trained on exactly linear targets can reach
        # the least-squares optimum of zero error.
        data = linear_dataset()
        rng = np.random.default_rng(4)
        params = bm.MlpParams([rng.normal(scale=0.1, size=(3, 1))], [np.zeros(1)])
        cfg = bm.TrainConfig(lr=5e-3, epochs=400, batch_size=50, seed=1)
        trained = bm.train_mlp(params, data, cfg)
        assert mse_loss(trained, data.train_X, data.train_Y) < 1e-4

    def test_deterministic_per_seed(self):
        data = linear_dataset()
        arch = bm.MlpArch(3, 1, hidden_width=8, hidden_layers=2)
        cfg = bm.TrainConfig(lr=1e-3, epochs=3, batch_size=32, seed=11)
        a = bm.train_mlp(bm.init_mlp(arch, 0), data, cfg)
        b = bm.train_mlp(bm.init_mlp(arch, 0), data, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_divergence_error_names_step(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(64, 2)) * 1e150
        Y = rng.normal(size=(64, 1)) * 1e150
        data = bm.Dataset(X, Y, X[:4], Y[:4])
        params = bm.init_mlp(bm.MlpArch(2, 1, hidden_width=4, hidden_layers=1), seed=0)
        with pytest.raises(NumericalError, match=r"step \d+"):
            bm.train_mlp(params, data, bm.TrainConfig(lr=1.0, epochs=2, batch_size=16, seed=0))


class TestSampleHypotheses:
    def test_single_sample_equals_manual_run(self):
        data = linear_dataset(seed=6, n=60)
        arch = bm.MlpArch(3, 1, hidden_width=8, hidden_layers=2)
        cfg = bm.TrainConfig(lr=1e-3, epochs=2, batch_size=16, seed=21)
        hyp, train_losses = bm.sample_nn_hypotheses(arch, data, S=1, cfg=cfg)
        manual = bm.train_mlp(bm.init_mlp(arch, 21), data, cfg)
        np.testing.assert_array_equal(hyp.predictions[0], bm.mlp_forward(manual, data.test_X))
        assert train_losses[0] == pytest.approx(mse_loss(manual, data.train_X, data.train_Y))
        assert hyp.source == "neural_net"

    def test_pendulum_losses_finite_and_spread(self):
        data = bm.generate_pendulum_dataset(200, 40, seed=3)
        arch = bm.MlpArch(2, 1, hidden_width=16, hidden_layers=2)
        cfg = bm.TrainConfig(lr=1e-3, epochs=3, batch_size=64, seed=0)
        hyp, train_losses = bm.sample_nn_hypotheses(arch, data, S=12, cfg=cfg)
        losses = bm.test_losses(hyp, data).losses
        assert np.all(np.isfinite(losses)) and np.all(losses >= 0)
        assert losses.std() > 0.0

    def test_training_reduces_loss_on_every_hypothesis(self):
        data = linear_dataset(seed=7, n=120)
        arch = bm.MlpArch(3, 1, hidden_width=8, hidden_layers=2)
        cfg = bm.TrainConfig(lr=1e-3, epochs=5, batch_size=32, seed=40)
        _, final_losses = bm.sample_nn_hypotheses(arch, data, S=6, cfg=cfg)
        for s, final in enumerate(final_losses):
            initial = mse_loss(bm.init_mlp(arch, cfg.seed + s), data.train_X, data.train_Y)
            assert final <= initial

    def test_arch_mismatch_rejected(self):
        data = linear_dataset()
        with pytest.raises(ValueError, match="match"):
            bm.sample_nn_hypotheses(bm.MlpArch(5, 1), data, S=1, cfg=bm.TrainConfig())


def test_paper_scale_arch_dimensions():
    arch = bm.MlpArch(784, 10, hidden_width=512, hidden_layers=10)
    dims = arch.layer_dims()
    assert len(dims) == 11
    assert dims[0] == (784, 512) and dims[-1] == (512, 10)
