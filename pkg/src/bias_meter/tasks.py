"""Desk-scale task generators and loaders.

Three task families: an inverted pendulum whose optimal control is known in
closed form (regression onto that control), a synthetic regression task
whose targets live exactly in an RBF feature space (random Fourier
features times a fixed weight matrix), and IDX-format image classification
encoded as one-hot regression.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


# ---------------------------------------------------------------------------
# Inverted pendulum: dynamics, cost, value function, optimal control
# ---------------------------------------------------------------------------

def pendulum_dynamics(theta, omega, u):
    """State derivatives (theta_dot, omega_dot) = (omega, sin(theta) + u)."""
    theta = np.asarray(theta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    return omega, np.sin(theta) + np.asarray(u, dtype=np.float64)


def pendulum_cost(u, theta, omega):
    """Instantaneous control cost 1/2 u^2 + 24 theta^2 + (8 theta + 4 omega)(theta - sin theta)."""
    u = np.asarray(u, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    return 0.5 * u**2 + 24.0 * theta**2 + (8.0 * theta + 4.0 * omega) * (theta - np.sin(theta))


def pendulum_value(theta, omega):
    """Optimal cost-to-go 14 theta^2 + 8 theta omega + 2 omega^2."""
    theta = np.asarray(theta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    return 14.0 * theta**2 + 8.0 * theta * omega + 2.0 * omega**2


def pendulum_optimal_control(theta, omega):
    """Optimal action u = -8 theta - 4 omega."""
    return -8.0 * np.asarray(theta, dtype=np.float64) - 4.0 * np.asarray(omega, dtype=np.float64)


def bellman_residual(theta, omega):
    """Stationarity check: dV/dtheta * theta_dot + dV/domega * omega_dot + C at the optimal u.

    Identically zero when the value function and control law are correct.
    """
    theta = np.asarray(theta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    u = pendulum_optimal_control(theta, omega)
    dv_dtheta = 28.0 * theta + 8.0 * omega
    dv_domega = 8.0 * theta + 4.0 * omega
    omega_dot = np.sin(theta) + u
    return dv_dtheta * omega + dv_domega * omega_dot + pendulum_cost(u, theta, omega)


def generate_pendulum_dataset(
    n_train: int = 10000, n_test: int = 100, seed: int = 0
) -> Dataset:
    """States uniform on [-pi, pi] x [-1, 1], targets the optimal control."""
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    rng = np.random.default_rng(seed)
    total = n_train + n_test
    theta = rng.uniform(-np.pi, np.pi, size=total)
    omega = rng.uniform(-1.0, 1.0, size=total)
    X = np.column_stack([theta, omega])
    Y = pendulum_optimal_control(theta, omega)[:, None]
    return Dataset(
        train_X=X[:n_train],
        train_Y=Y[:n_train],
        test_X=X[n_train:],
        test_Y=Y[n_train:],
        name="pendulum",
        meta={"seed": seed, "generator": "pendulum"},
    )


# ---------------------------------------------------------------------------
# Synthetic RBF-realizable regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticGpSpec:
    """Random-Fourier-feature regression task whose targets are noiseless
    linear functions of the features (so they lie in the RBF hypothesis
    space the features approximate)."""

    num_features: int = 4096
    input_dim: int = 2
    output_dim: int = 1
    bandwidth: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.num_features, self.input_dim, self.output_dim) < 1:
            raise ValueError("num_features, input_dim, output_dim must be >= 1")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


def random_fourier_features(
    num_features: int, input_dim: int, bandwidth: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Frequencies and phases whose cosine features approximate the RBF kernel.

    With frequencies ~ N(0, bandwidth * I) and phases uniform on [0, 2pi),
    (2/P) sum_p cos(w_p x + b_p) cos(w_p x' + b_p) converges to
    exp(-bandwidth/2 ||x - x'||^2).
    """
    W = rng.normal(scale=np.sqrt(bandwidth), size=(input_dim, num_features))
    b = rng.uniform(0.0, 2.0 * np.pi, size=num_features)
    return W, b


def rff_transform(X: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Feature map sqrt(2/P) cos(X W + b), one row per input point."""
    X = np.asarray(X, dtype=np.float64)
    return np.sqrt(2.0 / W.shape[1]) * np.cos(X @ W + b)


def generate_synthetic_gp_task(
    spec: SyntheticGpSpec, n_train: int = 256, n_test: int = 64
) -> Dataset:
    """Inputs uniform on the unit cube; targets feature_map(X) @ theta_star.

    theta_star ~ N(0, I/P), drawn (with the features) from spec.seed, so the
    same spec always produces the same function.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    rng = np.random.default_rng(spec.seed)
    W, b = random_fourier_features(spec.num_features, spec.input_dim, spec.bandwidth, rng)
    theta_star = rng.normal(size=(spec.num_features, spec.output_dim)) / np.sqrt(
        spec.num_features
    )
    X = rng.uniform(0.0, 1.0, size=(n_train + n_test, spec.input_dim))
    Y = rff_transform(X, W, b) @ theta_star
    return Dataset(
        train_X=X[:n_train],
        train_Y=Y[:n_train],
        test_X=X[n_train:],
        test_Y=Y[n_train:],
        name="synthetic-gp",
        meta={
            "seed": spec.seed,
            "generator": "synthetic-gp",
            "num_features": spec.num_features,
            "bandwidth": spec.bandwidth,
        },
    )


# ---------------------------------------------------------------------------
# IDX image files and one-hot classification-as-regression
# ---------------------------------------------------------------------------

def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair: images flattened row-major, scaled to [0, 1].

    Validates the big-endian magic numbers, completeness of the payloads,
    and that image and label counts agree.
    """
    with open(images_path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise DataError(f"truncated IDX image header in {images_path}")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(
                f"bad IDX image magic 0x{magic:08x} in {images_path} "
                f"(expected 0x{IDX_IMAGES_MAGIC:08x})"
            )
        payload = f.read(count * rows * cols)
        if len(payload) != count * rows * cols:
            raise DataError(f"truncated IDX image payload in {images_path}")
    with open(labels_path, "rb") as f:
        header = f.read(8)
        if len(header) < 8:
            raise DataError(f"truncated IDX label header in {labels_path}")
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise DataError(
                f"bad IDX label magic 0x{magic:08x} in {labels_path} "
                f"(expected 0x{IDX_LABELS_MAGIC:08x})"
            )
        label_bytes = f.read(label_count)
        if len(label_bytes) != label_count:
            raise DataError(f"truncated IDX label payload in {labels_path}")
    if count != label_count:
        raise DataError(f"IDX count mismatch: {count} images vs {label_count} labels")
    images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return images.astype(np.float64) / 255.0, labels


def write_idx_images(path, images: np.ndarray) -> None:
    """Write a (count, rows, cols) uint8 array in IDX image format."""
    arr = np.asarray(images)
    if arr.ndim != 3 or arr.dtype != np.uint8:
        raise ValueError("images must be a (count, rows, cols) uint8 array")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *arr.shape))
        f.write(arr.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    """Write a label vector (values 0..255) in IDX label format."""
    arr = np.asarray(labels)
    if arr.ndim != 1 or np.any(arr < 0) or np.any(arr > 255):
        raise ValueError("labels must be a 1-D array of byte values")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, arr.size))
        f.write(arr.astype(np.uint8).tobytes())


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot encode integer labels into a (count, num_classes) matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be 1-D")
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _is_one_hot(Y: np.ndarray) -> bool:
    return (
        np.all((Y == 0.0) | (Y == 1.0))
        and bool(np.all(Y.sum(axis=1) == 1.0))
        and Y.shape[1] > 1
    )


def _stratified_pick(
    labels: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Pick n indices spread as evenly as possible across label classes."""
    classes = np.unique(labels)
    counts = {c: int(np.sum(labels == c)) for c in classes}
    if n > sum(counts.values()):
        raise DataError(f"requested {n} rows but only {sum(counts.values())} available")
    quota = {c: min(n // classes.size, counts[c]) for c in classes}
    # Distribute the remainder deterministically by class order, skipping
    # exhausted classes.
    short = n - sum(quota.values())
    while short > 0:
        progressed = False
        for c in classes:
            if short == 0:
                break
            if quota[c] < counts[c]:
                quota[c] += 1
                short -= 1
                progressed = True
        if not progressed:
            raise DataError("stratified subsample could not fill the request")
    picks = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        picks.append(rng.choice(idx, size=quota[c], replace=False))
    return np.sort(np.concatenate(picks))


def subsample(data: Dataset, n_train: int, n_test: int, seed: int = 0) -> Dataset:
    """Seeded subsample without replacement, stratified for one-hot targets."""
    if n_train > data.n_train or n_test > data.n_test:
        raise DataError(
            f"requested {n_train}/{n_test} rows but dataset has "
            f"{data.n_train}/{data.n_test}"
        )
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    rng = np.random.default_rng(seed)
    if _is_one_hot(data.train_Y) and _is_one_hot(data.test_Y):
        train_idx = _stratified_pick(data.train_Y.argmax(axis=1), n_train, rng)
        test_idx = _stratified_pick(data.test_Y.argmax(axis=1), n_test, rng)
    else:
        train_idx = np.sort(rng.choice(data.n_train, size=n_train, replace=False))
        test_idx = np.sort(rng.choice(data.n_test, size=n_test, replace=False))
    return Dataset(
        train_X=data.train_X[train_idx],
        train_Y=data.train_Y[train_idx],
        test_X=data.test_X[test_idx],
        test_Y=data.test_Y[test_idx],
        name=data.name,
        meta={**data.meta, "subsample_seed": seed},
    )


def load_mnist_subset(
    images_path,
    labels_path,
    n_train: int,
    n_test: int,
    seed: int = 0,
    num_classes: int = 10,
) -> Dataset:
    """IDX images as a one-hot regression task, stratified desk-scale subset.

    A single IDX pair is split: the subset's train and test rows are drawn
    disjointly from the same pool, stratified per class.
    """
    images, labels = load_idx(images_path, labels_path)
    if n_train + n_test > images.shape[0]:
        raise DataError(
            f"requested {n_train}+{n_test} rows but IDX files hold {images.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    train_idx = _stratified_pick(labels, n_train, rng)
    mask = np.ones(images.shape[0], dtype=bool)
    mask[train_idx] = False
    rest = np.flatnonzero(mask)
    test_idx = rest[_stratified_pick(labels[rest], n_test, rng)]
    Y = one_hot(labels, num_classes)
    return Dataset(
        train_X=images[train_idx],
        train_Y=Y[train_idx],
        test_X=images[test_idx],
        test_Y=Y[test_idx],
        name="mnist-subset",
        meta={"seed": seed, "generator": "mnist-subset", "num_classes": num_classes},
    )
