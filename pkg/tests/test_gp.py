import numpy as np
import pytest
from scipy.stats import ks_2samp

import bias_meter as bm
from bias_meter.errors import NumericalError

from conftest import well_conditioned_problem


def spec(k=1, bandwidth=1.0):
    return bm.KernelSpec(bandwidth=bandwidth, output_dim=k)


class TestSgdFitAlpha:
    def test_single_point_scalar_fixed_point(self):
        data = bm.Dataset(
            np.array([[0.0]]), np.array([[3.7]]), np.array([[0.5]]), np.array([[0.0]])
        )
        cfg = bm.SgdConfig(lr_alpha=0.25, lr_A=0.25, batch_size=1, epochs=40, group_size=1, seed=0)
        alpha = bm.sgd_fit_alpha(data, spec(), cfg)
        assert alpha[0, 0] == pytest.approx(3.7, abs=1e-3)

    def test_converges_to_dense_solve(self):
        data = well_conditioned_problem(0, n_train=8, n_test=4)
        cfg = bm.SgdConfig(lr_alpha=2.0, lr_A=2.0, batch_size=4, epochs=800, group_size=8, seed=0)
        alpha = bm.sgd_fit_alpha(data, spec(), cfg)
        K = bm.kernel_matrix(spec(), data.train_X, data.train_X)
        expected = np.linalg.solve(K, data.train_Y)
        assert np.linalg.norm(alpha - expected) / np.linalg.norm(expected) < 1e-2

    def test_zero_targets_give_zero_alpha(self):
        data = well_conditioned_problem(1, n_train=6, n_test=2)
        data = bm.Dataset(data.train_X, np.zeros((6, 1)), data.test_X, data.test_Y)
        cfg = bm.SgdConfig(lr_alpha=0.5, lr_A=0.5, batch_size=3, epochs=20, group_size=6, seed=0)
        assert np.array_equal(bm.sgd_fit_alpha(data, spec(), cfg), np.zeros((6, 1)))

    def test_divergence_reports_step_and_lr(self):
        data = bm.generate_pendulum_dataset(400, 20, seed=0)
        cfg = bm.SgdConfig(lr_alpha=50.0, lr_A=5.0, batch_size=64, epochs=50, group_size=512, seed=0)
        with pytest.raises(NumericalError, match=r"step \d+.*lr"):
            bm.sgd_fit_alpha(data, spec(), cfg)


class TestSgdFitA:
    def test_interpolating_case_recovers_identity_action(self):
        data = well_conditioned_problem(2, n_train=8, n_test=8)
        data = bm.Dataset(data.train_X, data.train_Y, data.train_X, data.train_Y)
        cfg = bm.SgdConfig(lr_alpha=2.0, lr_A=2.0, batch_size=4, epochs=800, group_size=8, seed=0)
        A = bm.sgd_fit_A(data, spec(), cfg)
        K = bm.kernel_matrix(spec(), data.train_X, data.train_X)
        np.testing.assert_allclose(K @ A, K, atol=1e-4)

    def test_converges_to_dense_solve(self):
        data = well_conditioned_problem(3, n_train=8, n_test=4)
        cfg = bm.SgdConfig(lr_alpha=2.0, lr_A=2.0, batch_size=4, epochs=800, group_size=8, seed=0)
        A = bm.sgd_fit_A(data, spec(), cfg)
        K = bm.kernel_matrix(spec(), data.train_X, data.train_X)
        Kxt = bm.kernel_matrix(spec(), data.train_X, data.test_X)
        expected = np.linalg.solve(K, Kxt)
        assert np.linalg.norm(A - expected) / np.linalg.norm(expected) < 1e-2

    def test_degenerate_duplicate_points_stay_finite(self):
        # All training points identical: K is rank one; the solver must not
        # blow up and the residual must match the pseudoinverse optimum.
        X = np.tile([[0.5, -0.25]], (4, 1))
        Xt = np.array([[0.0, 0.0], [1.0, 1.0]])
        data = bm.Dataset(X, np.ones((4, 1)), Xt, np.zeros((2, 1)))
        cfg = bm.SgdConfig(lr_alpha=0.05, lr_A=0.05, batch_size=2, epochs=400, group_size=4, seed=0)
        A = bm.sgd_fit_A(data, spec(), cfg)
        assert np.all(np.isfinite(A))
        K = bm.kernel_matrix(spec(), X, X)
        Kxt = bm.kernel_matrix(spec(), X, Xt)
        _, residual_A = bm.fit_residuals(np.zeros((4, 1)), A, data, spec(), group_size=4)
        best = np.linalg.norm(K @ np.linalg.pinv(K) @ Kxt - Kxt)
        assert residual_A <= best + 1e-2


class TestPosteriorMoments:
    def test_interpolation_at_training_point(self):
        data = well_conditioned_problem(4, n_train=6, n_test=3)
        # First test point is a training point; use the exact coefficients.
        test_X = data.test_X.copy()
        test_X[0] = data.train_X[2]
        data = bm.Dataset(data.train_X, data.train_Y, test_X, np.zeros((3, 1)))
        K = bm.kernel_matrix(spec(), data.train_X, data.train_X)
        Kxt = bm.kernel_matrix(spec(), data.train_X, data.test_X)
        alpha = np.linalg.solve(K, data.train_Y)
        A = np.linalg.solve(K, Kxt)
        mean, cov = bm.posterior_moments(alpha, A, data, spec())
        assert mean[0, 0] == pytest.approx(data.train_Y[2, 0], abs=1e-8)
        np.testing.assert_allclose(cov[0, :], 0.0, atol=1e-8)
        np.testing.assert_allclose(cov[:, 0], 0.0, atol=1e-8)

    def test_zero_A_gives_prior_covariance(self):
        data = well_conditioned_problem(5, n_train=5, n_test=4)
        mean, cov = bm.posterior_moments(
            np.zeros((5, 1)), np.zeros((5, 4)), data, spec()
        )
        assert np.array_equal(mean, np.zeros((4, 1)))
        np.testing.assert_allclose(
            cov, bm.kernel_matrix(spec(), data.test_X, data.test_X), atol=1e-12
        )

    def test_matches_closed_form_conditional(self):
        data = well_conditioned_problem(6, n_train=8, n_test=4)
        K = bm.kernel_matrix(spec(), data.train_X, data.train_X)
        Kxt = bm.kernel_matrix(spec(), data.train_X, data.test_X)
        alpha = np.linalg.solve(K, data.train_Y)
        A = np.linalg.solve(K, Kxt)
        mean, cov = bm.posterior_moments(alpha, A, data, spec())
        expected_mean = Kxt.T @ np.linalg.solve(K, data.train_Y)
        expected_cov = (
            bm.kernel_matrix(spec(), data.test_X, data.test_X)
            - Kxt.T @ np.linalg.solve(K, Kxt)
        )
        np.testing.assert_allclose(mean, expected_mean, atol=1e-6)
        np.testing.assert_allclose(cov, 0.5 * (expected_cov + expected_cov.T), atol=1e-6)

    def test_covariance_is_symmetric(self):
        data = well_conditioned_problem(7, n_train=6, n_test=5)
        _, cov = bm.posterior_moments(np.zeros((6, 1)), np.zeros((6, 5)), data, spec())
        assert np.array_equal(cov, cov.T)


class TestPsdSqrt:
    def test_identity(self):
        root, clamped = bm.psd_sqrt(np.eye(4))
        np.testing.assert_allclose(root, np.eye(4), atol=1e-12)
        assert clamped == 0.0

    def test_diagonal(self):
        root, clamped = bm.psd_sqrt(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(root, np.diag([2.0, 3.0]), atol=1e-12)
        assert clamped == 0.0

    def test_reconstructs_random_psd(self):
        rng = np.random.default_rng(8)
        M = rng.normal(size=(6, 6))
        C = M @ M.T
        root, clamped = bm.psd_sqrt(C)
        np.testing.assert_allclose(root @ root.T, C, atol=1e-10 * np.linalg.norm(C))
        assert clamped == 0.0

    def test_clamps_negative_eigenvalues(self):
        C = np.diag([1.0, -0.25])
        root, clamped = bm.psd_sqrt(C)
        np.testing.assert_allclose(root, np.diag([1.0, 0.0]), atol=1e-12)
        assert clamped == pytest.approx(0.25)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            bm.psd_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestDrawSamples:
    def _solve(self, mean, sqrt_cov):
        n, k = mean.shape
        return bm.PosteriorSolve(
            alpha=np.zeros((1, k)), A=np.zeros((1, n)), mean=mean,
            cov_scalar=sqrt_cov @ sqrt_cov.T, sqrt_cov=sqrt_cov, clamped_mass=0.0,
        )

    def test_zero_sqrt_gives_mean(self):
        mean = np.arange(8.0).reshape(4, 2)
        hyp = bm.draw_samples(self._solve(mean, np.zeros((4, 4))), S=7, seed=0)
        assert np.array_equal(hyp.predictions, np.broadcast_to(mean, (7, 4, 2)))

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(9)
        M = rng.normal(size=(4, 4))
        cov = M @ M.T
        root, _ = bm.psd_sqrt(cov)
        mean = rng.normal(size=(4, 1))
        S = 10_000
        hyp = bm.draw_samples(self._solve(mean, root), S=S, seed=3)
        draws = hyp.predictions[:, :, 0]
        sigma = np.sqrt(np.diag(cov))
        assert np.all(np.abs(draws.mean(axis=0) - mean[:, 0]) <= 4.0 * sigma / np.sqrt(S))
        sample_cov = np.cov(draws.T, ddof=0)
        assert np.linalg.norm(sample_cov - cov) <= 0.10 * np.linalg.norm(cov)

    def test_deterministic_per_seed(self):
        mean = np.zeros((3, 2))
        root = np.eye(3)
        a = bm.draw_samples(self._solve(mean, root), S=5, seed=42)
        b = bm.draw_samples(self._solve(mean, root), S=5, seed=42)
        assert np.array_equal(a.predictions, b.predictions)
        c = bm.draw_samples(self._solve(mean, root), S=5, seed=43)
        assert not np.array_equal(a.predictions, c.predictions)

    def test_rejects_bad_sample_count(self):
        with pytest.raises(ValueError):
            bm.draw_samples(self._solve(np.zeros((2, 1)), np.eye(2)), S=0, seed=0)


class TestExactPosterior:
    def test_interpolates_training_set(self):
        base = well_conditioned_problem(10, n_train=8, n_test=8)
        data = bm.Dataset(base.train_X, base.train_Y, base.train_X, base.train_Y)
        solve = bm.exact_posterior(data, spec(), jitter=1e-10)
        np.testing.assert_allclose(solve.mean, data.train_Y, atol=1e-6)
        assert np.abs(solve.cov_scalar).max() < 1e-6

    def test_two_point_hand_inverse(self):
        X = np.array([[0.0], [1.0]])
        Y = np.array([[1.0], [-2.0]])
        data = bm.Dataset(X, Y, np.array([[0.25]]), np.array([[0.0]]))
        solve = bm.exact_posterior(data, spec(), jitter=0.0)
        c = np.exp(-0.5)
        inv = np.array([[1.0, -c], [-c, 1.0]]) / (1.0 - c * c)
        np.testing.assert_allclose(solve.alpha, inv @ Y, rtol=1e-10)

    def test_agrees_with_converged_sgd(self):
        data = well_conditioned_problem(11, n_train=8, n_test=4)
        cfg = bm.SgdConfig(lr_alpha=2.0, lr_A=2.0, batch_size=4, epochs=800, group_size=8, seed=1)
        alpha, A = bm.sgd_fit(data, spec(), cfg)
        solve = bm.exact_posterior(data, spec(), jitter=1e-12)
        assert np.linalg.norm(alpha - solve.alpha) / np.linalg.norm(solve.alpha) < 1e-2
        assert np.linalg.norm(A - solve.A) / np.linalg.norm(solve.A) < 1e-2

    def test_singular_matrix_suggests_jitter(self):
        X = np.tile([[1.0, 2.0]], (3, 1))
        data = bm.Dataset(X, np.ones((3, 1)), X[:1], np.ones((1, 1)))
        with pytest.raises(NumericalError, match="jitter"):
            bm.exact_posterior(data, spec(), jitter=0.0)

    def test_size_guard(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(4097, 1))
        data = bm.Dataset(X, np.zeros((4097, 1)), X[:1], np.zeros((1, 1)))
        with pytest.raises(ValueError, match="4096"):
            bm.exact_posterior(data, spec())


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_sgd_reproduces_exact_moments(self, seed):
        data = well_conditioned_problem(seed, n_train=16, n_test=8)
        cfg = bm.SgdConfig(lr_alpha=2.0, lr_A=2.0, batch_size=8, epochs=1000, group_size=16, seed=seed)
        alpha, A = bm.sgd_fit(data, spec(), cfg)
        mean, cov = bm.posterior_moments(alpha, A, data, spec())
        exact = bm.exact_posterior(data, spec(), jitter=1e-12)
        assert np.linalg.norm(mean - exact.mean) / np.linalg.norm(exact.mean) < 1e-2
        assert np.linalg.norm(cov - exact.cov_scalar) / np.linalg.norm(exact.cov_scalar) < 5e-2


def test_exact_oracle_samples_interpolate(pendulum_small):
    data = bm.Dataset(
        pendulum_small.train_X, pendulum_small.train_Y,
        pendulum_small.train_X, pendulum_small.train_Y,
    )
    solve = bm.exact_posterior(data, spec(), jitter=1e-10)
    hyp = bm.draw_samples(solve, S=50, seed=0, source="exact_oracle")
    err = np.abs(hyp.predictions - data.train_Y[None, :, :]).max()
    assert err < 1e-6 * max(1.0, np.abs(data.train_Y).max())


def test_samples_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    hyp = bm.HypothesisSamples(rng.normal(size=(6, 4, 3)), seed=9, source="kernel")
    manifest = bm.save_samples(
        hyp, tmp_path / "s.csv", tmp_path / "s.json",
        extra_manifest={"residual_alpha": 0.5, "residual_A": 1.5, "clamped_mass": 0.0},
    )
    assert manifest["S"] == 6 and manifest["n"] == 4 and manifest["k"] == 3
    back = bm.load_samples(tmp_path / "s.csv", tmp_path / "s.json")
    assert np.array_equal(back.predictions, hyp.predictions)
    assert back.seed == 9 and back.source == "kernel"


def test_sample_kernel_hypotheses_exact_path(pendulum_small):
    cfg = bm.SgdConfig(seed=3)
    hyp, solve = bm.sample_kernel_hypotheses(
        pendulum_small, spec(), cfg, S=20, method="exact", jitter=1e-10
    )
    assert hyp.source == "exact_oracle"
    assert hyp.predictions.shape == (20, 16, 1)
    assert solve.residual_alpha < 1e-6


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="constant-rate SGD on the desk pendulum keeps shifting the loss "
    "distribution between E and 2E epochs (measured two-sample KS 0.5-0.9 "
    "across configurations); the <0.05 stability claim holds only at full "
    "convergence. See notes/decisions ledger.",
)
def test_loss_distribution_stability_pendulum():
    data = bm.generate_pendulum_dataset(2000, 100, seed=7)
    losses = {}
    for epochs in (50, 100):
        cfg = bm.SgdConfig(
            lr_alpha=1e-3, lr_A=1e-4, batch_size=64, epochs=epochs, group_size=1024, seed=7
        )
        hyp, _ = bm.sample_kernel_hypotheses(
            data, spec(), cfg, S=1000, method="sgd", sample_seed=11
        )
        losses[epochs] = bm.test_losses(hyp, data).losses
    assert ks_2samp(losses[50], losses[100]).statistic < 0.05


def test_loss_distribution_stability_at_convergence():
    # Where SGD actually converges, doubling the epochs leaves the sampled
    # loss distribution unchanged.
    data = well_conditioned_problem(14, n_train=48, n_test=16)
    losses = {}
    for epochs in (600, 1200):
        cfg = bm.SgdConfig(lr_alpha=2.0, lr_A=2.0, batch_size=16, epochs=epochs, group_size=48, seed=2)
        hyp, _ = bm.sample_kernel_hypotheses(data, spec(), cfg, S=1000, method="sgd", sample_seed=5)
        losses[epochs] = bm.test_losses(hyp, data).losses
    assert ks_2samp(losses[600], losses[1200]).statistic < 0.05
