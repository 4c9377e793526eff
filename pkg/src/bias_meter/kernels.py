"""Gaussian RBF kernel evaluation and memory-bounded kernel algebra.

The multi-output kernel used throughout is block-scalar: the matrix between
two inputs is kappa(x1, x2) * I_k with kappa(x1, x2) = exp(-g/2 * ||x1-x2||^2).
Only the scalar part is ever materialized; every k-channel solve decouples
into k independent scalar solves, and products against large kernel matrices
are computed group by group so the full matrix never needs to exist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class KernelSpec:
    """Scalar Gaussian RBF kernel with a block-identity output structure.

    bandwidth is the multiplier g in kappa = exp(-g/2 * ||x1-x2||^2);
    output_dim is the number of (independent) output channels k.
    """

    bandwidth: float = 1.0
    output_dim: int = 1
    family: str = "gaussian_rbf"

    def __post_init__(self) -> None:
        if self.family != "gaussian_rbf":
            raise ValueError(f"unsupported kernel family: {self.family!r}")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.output_dim < 1:
            raise ValueError(f"output_dim must be >= 1, got {self.output_dim}")


def as_points(points: np.ndarray) -> np.ndarray:
    """Validate and return a (count, input_dim) float array of task inputs."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError(f"point set must be a nonempty 2-D array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point set contains non-finite entries")
    return pts


def kernel_scalar(spec: KernelSpec, x1: np.ndarray, x2: np.ndarray) -> float:
    """Evaluate kappa(x1, x2) = exp(-bandwidth/2 * ||x1 - x2||^2) for two points."""
    a = np.asarray(x1, dtype=np.float64).ravel()
    b = np.asarray(x2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"input dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("kernel inputs must be finite")
    d = a - b
    return float(np.exp(-0.5 * spec.bandwidth * np.dot(d, d)))


def kernel_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Dense scalar kernel matrix with entries kappa(a_i, b_j), shape (|A|, |B|).

    Squared distances are computed pairwise (not via the Gram expansion), so
    kappa(a, a) is exactly 1 and the A = B case is exactly symmetric.
    """
    A = as_points(A)
    B = as_points(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"input dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    sq = cdist(A, B, "sqeuclidean")
    np.multiply(sq, -0.5 * spec.bandwidth, out=sq)
    return np.exp(sq, out=sq)


def kernel_apply_chunked(
    spec: KernelSpec,
    A: np.ndarray,
    B: np.ndarray,
    M: np.ndarray,
    group_size: int,
) -> np.ndarray:
    """Compute K(A, B) @ M without materializing K(A, B).

    Both the output rows (points of A) and the contraction dimension
    (points of B) are processed in groups of at most group_size, so peak
    temporary memory is one group_size x group_size kernel block.
    """
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")
    A = as_points(A)
    B = as_points(B)
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] != B.shape[0]:
        raise ValueError(f"operand has {M.shape[0]} rows, expected {B.shape[0]}")
    out = np.zeros((A.shape[0],) + M.shape[1:], dtype=np.float64)
    for i in range(0, A.shape[0], group_size):
        rows = slice(i, min(i + group_size, A.shape[0]))
        acc = out[rows]
        for j in range(0, B.shape[0], group_size):
            cols = slice(j, min(j + group_size, B.shape[0]))
            acc += kernel_matrix(spec, A[rows], B[cols]) @ M[cols]
    return out


def kernel_matvec_chunked(
    spec: KernelSpec, X: np.ndarray, v: np.ndarray, group_size: int
) -> np.ndarray:
    """K(X, X) @ v computed by summing per-group contributions K(., X_i) v_i."""
    X = as_points(X)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != X.shape[0]:
        raise ValueError(f"vector length {v.shape} does not match {X.shape[0]} points")
    return kernel_apply_chunked(spec, X, X, v[:, None], group_size)[:, 0]
