import numpy as np
import pytest

import bias_meter as bm


@pytest.fixture(scope="session")
def digits_idx(tmp_path_factory):
    """Handwritten-digit images written as an IDX pair (MNIST stand-in).

    Uses the 8x8 digit scans bundled with scikit-learn, rescaled to the
    0..255 byte range so the files are format-identical to MNIST IDX data.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = np.round(digits.images / 16.0 * 255.0).astype(np.uint8)
    root = tmp_path_factory.mktemp("idx")
    images_path = root / "digits-images.idx"
    labels_path = root / "digits-labels.idx"
    bm.write_idx_images(images_path, images)
    bm.write_idx_labels(labels_path, digits.target)
    return images_path, labels_path


@pytest.fixture(scope="session")
def digits_task(digits_idx):
    """Stratified 500/100 one-hot digit regression task."""
    images_path, labels_path = digits_idx
    return bm.load_mnist_subset(images_path, labels_path, 500, 100, seed=0)


@pytest.fixture(scope="session")
def pendulum_small():
    return bm.generate_pendulum_dataset(64, 16, seed=1)


def well_conditioned_problem(seed, n_train=64, n_test=16, dim=8, scale=3.0, k=1):
    """Random RBF regression problem whose kernel matrix SGD can actually
    invert: points spread enough (8-D, side-3 box) that cond(K) stays ~10."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, scale, size=(n_train, dim))
    Xt = rng.uniform(0.0, scale, size=(n_test, dim))
    Y = rng.normal(size=(n_train, k))
    Yt = np.zeros((n_test, k))
    return bm.Dataset(X, Y, Xt, Yt, name="random-rbf")
