"""bias-meter: estimate the inductive bias (in bits) a task demands.

Hypotheses are sampled from an RBF-kernel space (GP pathwise draws) or by
training small MLPs; their test-loss distribution is fitted with a scaled
non-central Chi-squared, and the bias at target error eps is -log CDF(eps).

Submodules are imported lazily so the CLI can cap BLAS threads before numpy
loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "datasets": ["Dataset", "load_dataset", "save_dataset"],
    "errors": ["BiasMeterError", "DataError", "NumericalError"],
    "gp": [
        "PosteriorSolve", "SgdConfig", "build_solve", "draw_samples",
        "exact_posterior", "fit_residuals", "posterior_moments", "psd_sqrt",
        "sample_kernel_hypotheses", "sgd_fit", "sgd_fit_A", "sgd_fit_alpha",
    ],
    "kernels": [
        "KernelSpec", "kernel_apply_chunked", "kernel_matrix",
        "kernel_matvec_chunked", "kernel_scalar",
    ],
    "lossdist": [
        "BiasEstimate", "ChiSquaredFit", "ConvergenceDiagnostic", "LossSamples",
        "SankaranTerms", "bias_of_model", "bias_record", "convergence_diagnostic",
        "fit_mle", "fit_mom", "histogram_table", "inductive_bias", "log_cdf",
        "ncx2_logpdf", "sankaran_cdf", "test_losses",
    ],
    "mlp": [
        "MlpArch", "MlpParams", "TrainConfig", "init_mlp", "mlp_forward",
        "mse_loss", "mse_loss_and_grads", "sample_nn_hypotheses", "train_mlp",
    ],
    "samples": ["HypothesisSamples", "load_samples", "save_samples"],
    "tasks": [
        "SyntheticGpSpec", "bellman_residual", "generate_pendulum_dataset",
        "generate_synthetic_gp_task", "load_idx", "load_mnist_subset", "one_hot",
        "pendulum_cost", "pendulum_dynamics", "pendulum_optimal_control",
        "pendulum_value", "random_fourier_features", "rff_transform",
        "subsample", "write_idx_images", "write_idx_labels",
    ],
}

_NAME_TO_MODULE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = ["__version__", *sorted(_NAME_TO_MODULE)]


def __getattr__(name: str):
    module = _NAME_TO_MODULE.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(import_module(f".{module}", __name__), name)
