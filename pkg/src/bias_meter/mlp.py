"""Neural-network hypothesis sampling by direct optimization.

Hypotheses are small fully-connected ReLU networks trained from independent
random initializations and data orders on the task's mean squared error.
Forward, backward, and the Adam update are implemented here in plain numpy
so parameter gradients can be verified against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .errors import NumericalError
from .samples import HypothesisSamples


@dataclass(frozen=True)
class MlpArch:
    """ReLU MLP shape: hidden_layers affine+ReLU blocks, then a linear head.

    hidden_layers counts the weight layers before the output projection, so
    the total number of weight matrices is hidden_layers + 1. All layers
    carry biases.
    """

    input_dim: int
    output_dim: int
    hidden_width: int = 64
    hidden_layers: int = 3

    def __post_init__(self) -> None:
        if min(self.input_dim, self.output_dim, self.hidden_width, self.hidden_layers) < 1:
            raise ValueError("all architecture dimensions must be >= 1")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class TrainConfig:
    """Adam settings for one hypothesis training run."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class MlpParams:
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(arch: MlpArch, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_dims():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _forward_cached(params: MlpParams, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping post-activation values for backprop."""
    acts = [X]
    a = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return a, acts


def mlp_forward(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Evaluate the network: affine+ReLU chain with a linear final layer."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"input must be 2-D, got shape {X.shape}")
    if X.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"input width {X.shape[1]} != first layer fan-in {params.weights[0].shape[0]}"
        )
    out, _ = _forward_cached(params, X)
    return out


def mse_loss(params: MlpParams, X: np.ndarray, Y: np.ndarray) -> float:
    """Mean over batch rows and output channels of squared error."""
    out = mlp_forward(params, X)
    return float(np.mean((out - Y) ** 2))


def mse_loss_and_grads(
    params: MlpParams, X: np.ndarray, Y: np.ndarray
) -> tuple[float, MlpParams]:
    """Loss plus analytic parameter gradients via backpropagation."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    out, acts = _forward_cached(params, X)
    if out.shape != Y.shape:
        raise ValueError(f"targets have shape {Y.shape}, predictions {out.shape}")
    loss = float(np.mean((out - Y) ** 2))
    delta = (2.0 / out.size) * (out - Y)
    g_w = [np.empty(0)] * len(params.weights)
    g_b = [np.empty(0)] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        g_w[i] = acts[i].T @ delta
        g_b[i] = delta.sum(axis=0)
        if i > 0:
            # acts[i] is the post-ReLU output of layer i-1; its positive
            # entries mark where that ReLU passes gradient.
            delta = (delta @ params.weights[i].T) * (acts[i] > 0.0)
    return loss, MlpParams(g_w, g_b)


def train_mlp(params: MlpParams, data: Dataset, cfg: TrainConfig) -> MlpParams:
    """Adam on the train-set MSE with a seeded shuffle per epoch.

    Returns the final parameters; raises NumericalError with the step index
    if the loss goes non-finite.
    """
    params = params.copy()
    X, Y = data.train_X, data.train_Y
    rng = np.random.default_rng(cfg.seed)
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    t = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(data.n_train)
        for lo in range(0, data.n_train, cfg.batch_size):
            batch = perm[lo : lo + cfg.batch_size]
            loss, grads = mse_loss_and_grads(params, X[batch], Y[batch])
            if not np.isfinite(loss):
                raise NumericalError(f"training loss became non-finite at step {t}")
            t += 1
            bc1 = 1.0 - cfg.beta1**t
            bc2 = 1.0 - cfg.beta2**t
            for i in range(len(params.weights)):
                for p, g, m, v in (
                    (params.weights[i], grads.weights[i], m_w[i], v_w[i]),
                    (params.biases[i], grads.biases[i], m_b[i], v_b[i]),
                ):
                    m *= cfg.beta1
                    m += (1.0 - cfg.beta1) * g
                    v *= cfg.beta2
                    v += (1.0 - cfg.beta2) * g * g
                    p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params


def sample_nn_hypotheses(
    arch: MlpArch, data: Dataset, S: int, cfg: TrainConfig
) -> tuple[HypothesisSamples, list[float]]:
    """Train S networks (seed = cfg.seed + s for init and shuffle) and
    collect their test-set predictions plus final train losses."""
    if S < 1:
        raise ValueError(f"S must be >= 1, got {S}")
    if arch.input_dim != data.input_dim or arch.output_dim != data.output_dim:
        raise ValueError(
            f"architecture ({arch.input_dim}->{arch.output_dim}) does not match "
            f"dataset ({data.input_dim}->{data.output_dim})"
        )
    preds = np.empty((S, data.n_test, data.output_dim))
    train_losses: list[float] = []
    for s in range(S):
        seed_s = cfg.seed + s
        try:
            trained = train_mlp(
                init_mlp(arch, seed_s),
                data,
                TrainConfig(
                    lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                    epochs=cfg.epochs, batch_size=cfg.batch_size, seed=seed_s,
                ),
            )
        except NumericalError as exc:
            raise NumericalError(f"hypothesis {s} (seed {seed_s}): {exc}") from exc
        preds[s] = mlp_forward(trained, data.test_X)
        train_losses.append(mse_loss(trained, data.train_X, data.train_Y))
    return HypothesisSamples(preds, seed=cfg.seed, source="neural_net"), train_losses
