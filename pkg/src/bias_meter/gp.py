"""Sampling hypotheses from the interpolating RBF-kernel space.

The hypothesis distribution over a test set is Gaussian with mean
K(Xt, X) alpha and scalar covariance kappa(Xt, Xt) - kappa(Xt, X) A shared
across output channels. alpha and A are fitted by mini-batch SGD against the
targets Y and K(X, Xt) respectively (never materializing K(X, X)), or by a
direct dense solve for small training sets. Draws reparameterize the
per-channel Gaussian as mean + sqrt(cov) z with z standard normal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .datasets import Dataset
from .errors import NumericalError
from .kernels import KernelSpec, kernel_apply_chunked, kernel_matrix
from .samples import HypothesisSamples

EXACT_SOLVE_MAX_N = 4096
CLAMP_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class SgdConfig:
    """Constant-rate SGD settings for the alpha and A fits.

    group_size bounds the kernel blocks materialized per step; seed fixes
    the per-epoch batch shuffle, so runs are bit-reproducible.
    """

    lr_alpha: float = 1e-3
    lr_A: float = 1e-4
    batch_size: int = 64
    epochs: int = 50
    group_size: int = 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr_alpha <= 0 or self.lr_A <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.batch_size, self.epochs, self.group_size) < 1:
            raise ValueError("batch_size, epochs, and group_size must be >= 1")


@dataclass
class PosteriorSolve:
    """Fitted coefficients plus the derived predictive moments.

    cov_scalar is the per-channel n x n covariance (shared across the k
    channels); sqrt_cov is its PSD-projected symmetric square root and
    clamped_mass the total negative eigenvalue mass removed by projection.
    """

    alpha: np.ndarray
    A: np.ndarray
    mean: np.ndarray
    cov_scalar: np.ndarray
    sqrt_cov: np.ndarray
    clamped_mass: float
    residual_alpha: float | None = None
    residual_A: float | None = None


def _check_consistent(data: Dataset, spec: KernelSpec) -> None:
    if spec.output_dim != data.output_dim:
        raise ValueError(
            f"kernel output_dim {spec.output_dim} != dataset output width {data.output_dim}"
        )


def _sgd_loop(
    data: Dataset,
    spec: KernelSpec,
    cfg: SgdConfig,
    fit_alpha: bool,
    fit_A: bool,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Run the mini-batch descent on alpha, A, or both with shared batches."""
    _check_consistent(data, spec)
    X, Y, Xt = data.train_X, data.train_Y, data.test_X
    N, k, n = data.n_train, data.output_dim, data.n_test
    alpha = np.zeros((N, k)) if fit_alpha else None
    A = np.zeros((N, n)) if fit_A else None
    rng = np.random.default_rng(cfg.seed)
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(N)
        for lo in range(0, N, cfg.batch_size):
            batch = perm[lo : lo + cfg.batch_size]
            xb = X[batch]
            params = [p for p in (alpha, A) if p is not None]
            stacked = params[0] if len(params) == 1 else np.hstack(params)
            # Overflow en route to the divergence check is expected; the
            # check below reports it with the step index.
            with np.errstate(over="ignore", invalid="ignore"):
                pred = kernel_apply_chunked(spec, xb, X, stacked, cfg.group_size)
                if not np.all(np.isfinite(pred)):
                    raise NumericalError(
                        f"SGD diverged at step {step}: non-finite prediction "
                        f"(lr_alpha={cfg.lr_alpha}, lr_A={cfg.lr_A})"
                    )
                targets = []
                if fit_alpha:
                    targets.append(Y[batch])
                if fit_A:
                    targets.append(kernel_matrix(spec, xb, Xt))
                resid = pred - (targets[0] if len(targets) == 1 else np.hstack(targets))
                # Batch-mean gradient: keeps stable learning rates independent
                # of batch and training-set size.
                grad = (2.0 / len(batch)) * kernel_apply_chunked(
                    spec, X, xb, resid, cfg.group_size
                )
                col = 0
                if fit_alpha:
                    alpha -= cfg.lr_alpha * grad[:, :k]
                    col = k
                if fit_A:
                    A -= cfg.lr_A * grad[:, col:]
            step += 1
    for name, arr, lr in (("alpha", alpha, cfg.lr_alpha), ("A", A, cfg.lr_A)):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NumericalError(
                f"SGD diverged: non-finite {name} after step {step - 1} (lr={lr})"
            )
    return alpha, A


def sgd_fit_alpha(data: Dataset, spec: KernelSpec, cfg: SgdConfig) -> np.ndarray:
    """Fit alpha ~ argmin ||Y - K(X, X) alpha||^2 by mini-batch SGD."""
    alpha, _ = _sgd_loop(data, spec, cfg, fit_alpha=True, fit_A=False)
    return alpha


def sgd_fit_A(data: Dataset, spec: KernelSpec, cfg: SgdConfig) -> np.ndarray:
    """Fit A ~ argmin ||K(X, Xt) - K(X, X) A||_F^2 by mini-batch SGD."""
    _, A = _sgd_loop(data, spec, cfg, fit_alpha=False, fit_A=True)
    return A


def sgd_fit(data: Dataset, spec: KernelSpec, cfg: SgdConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fit alpha and A jointly with shared mini-batches (one kernel pass each step)."""
    alpha, A = _sgd_loop(data, spec, cfg, fit_alpha=True, fit_A=True)
    return alpha, A


def fit_residuals(
    alpha: np.ndarray,
    A: np.ndarray,
    data: Dataset,
    spec: KernelSpec,
    group_size: int = 1024,
) -> tuple[float, float]:
    """Final objective residuals ||Y - K alpha||_F and ||K(X, Xt) - K A||_F."""
    stacked = np.hstack([alpha, A])
    applied = kernel_apply_chunked(spec, data.train_X, data.train_X, stacked, group_size)
    k = data.output_dim
    r_alpha = float(np.linalg.norm(data.train_Y - applied[:, :k]))
    target_A = kernel_matrix(spec, data.train_X, data.test_X)
    r_A = float(np.linalg.norm(target_A - applied[:, k:]))
    return r_alpha, r_A


def posterior_moments(
    alpha: np.ndarray,
    A: np.ndarray,
    data: Dataset,
    spec: KernelSpec,
    group_size: int = 1024,
) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean K(Xt, X) alpha and symmetrized scalar covariance."""
    _check_consistent(data, spec)
    alpha = np.asarray(alpha, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    N, n, k = data.n_train, data.n_test, data.output_dim
    if alpha.shape != (N, k):
        raise ValueError(f"alpha has shape {alpha.shape}, expected {(N, k)}")
    if A.shape != (N, n):
        raise ValueError(f"A has shape {A.shape}, expected {(N, n)}")
    applied = kernel_apply_chunked(
        spec, data.test_X, data.train_X, np.hstack([alpha, A]), group_size
    )
    mean = applied[:, :k]
    cov = kernel_matrix(spec, data.test_X, data.test_X) - applied[:, k:]
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def psd_sqrt(cov_scalar: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetric square root of the PSD projection of a symmetric matrix.

    Eigenvalues below zero are clamped to zero; the returned clamped_mass is
    the sum of the negated eigenvalues, a diagnostic for how indefinite the
    approximate covariance was.
    """
    cov = np.asarray(cov_scalar, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-8, rtol=1e-8):
        raise ValueError("covariance must be symmetric")
    try:
        evals, evecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    clamped_mass = float(np.sum(np.maximum(0.0, -evals)))
    pos = np.maximum(evals, 0.0)
    sqrt_cov = (evecs * np.sqrt(pos)) @ evecs.T
    return sqrt_cov, clamped_mass


def build_solve(
    alpha: np.ndarray,
    A: np.ndarray,
    data: Dataset,
    spec: KernelSpec,
    group_size: int = 1024,
    with_residuals: bool = True,
) -> PosteriorSolve:
    """Assemble a PosteriorSolve from fitted coefficients."""
    mean, cov = posterior_moments(alpha, A, data, spec, group_size)
    sqrt_cov, clamped = psd_sqrt(cov)
    trace = float(np.trace(cov))
    if trace > 0 and clamped > CLAMP_WARN_FRACTION * trace:
        warnings.warn(
            f"covariance projection clamped {clamped:.3e} of eigenvalue mass "
            f"({clamped / trace:.1%} of trace); the A fit may be far from converged",
            stacklevel=2,
        )
    r_alpha = r_A = None
    if with_residuals:
        r_alpha, r_A = fit_residuals(alpha, A, data, spec, group_size)
    return PosteriorSolve(
        alpha=np.asarray(alpha, dtype=np.float64),
        A=np.asarray(A, dtype=np.float64),
        mean=mean,
        cov_scalar=cov,
        sqrt_cov=sqrt_cov,
        clamped_mass=clamped,
        residual_alpha=r_alpha,
        residual_A=r_A,
    )


def exact_posterior(data: Dataset, spec: KernelSpec, jitter: float = 1e-10) -> PosteriorSolve:
    """Direct dense solve: alpha = K^-1 Y, A = K^-1 K(X, Xt), K jittered.

    Only for training sets small enough to factorize (N <= 4096).
    """
    _check_consistent(data, spec)
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    N = data.n_train
    if N > EXACT_SOLVE_MAX_N:
        raise ValueError(f"exact solve limited to N <= {EXACT_SOLVE_MAX_N}, got {N}")
    K = kernel_matrix(spec, data.train_X, data.train_X)
    if jitter > 0:
        K[np.diag_indices_from(K)] += jitter
    rhs = np.hstack([data.train_Y, kernel_matrix(spec, data.train_X, data.test_X)])
    try:
        cho = scipy.linalg.cho_factor(K, lower=True, check_finite=False)
        solved = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            f"kernel matrix is singular at jitter={jitter}; retry with a larger "
            f"jitter (e.g. 1e-8)"
        ) from exc
    k = data.output_dim
    return build_solve(solved[:, :k], solved[:, k:], data, spec, group_size=max(N, 1))


def draw_samples(
    solve: PosteriorSolve, S: int, seed: int, source: str = "kernel"
) -> HypothesisSamples:
    """Draw S pathwise samples mean[:, c] + sqrt_cov @ z with z ~ N(0, I_n).

    Channels use independent z vectors; the draw order is fixed by the
    (S, n, k) layout of a single standard-normal tensor, so results are
    bit-reproducible per seed.
    """
    if S < 1:
        raise ValueError(f"S must be >= 1, got {S}")
    n, k = solve.mean.shape
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((S, n, k))
    mixed = solve.sqrt_cov @ z.transpose(1, 0, 2).reshape(n, S * k)
    preds = solve.mean[None, :, :] + mixed.reshape(n, S, k).transpose(1, 0, 2)
    return HypothesisSamples(preds, seed=seed, source=source)


def sample_kernel_hypotheses(
    data: Dataset,
    spec: KernelSpec,
    cfg: SgdConfig,
    S: int,
    method: str = "sgd",
    jitter: float = 1e-10,
    sample_seed: int | None = None,
) -> tuple[HypothesisSamples, PosteriorSolve]:
    """Fit the posterior (SGD or exact) and draw S hypothesis samples."""
    if method == "sgd":
        alpha, A = sgd_fit(data, spec, cfg)
        solve = build_solve(alpha, A, data, spec, cfg.group_size)
        source = "kernel"
    elif method == "exact":
        solve = exact_posterior(data, spec, jitter)
        source = "exact_oracle"
    else:
        raise ValueError(f"unknown fit method: {method!r}")
    seed = cfg.seed if sample_seed is None else sample_seed
    return draw_samples(solve, S, seed=seed, source=source), solve
