"""Gaussian kernel, Gram matrices and MMD quadratic forms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .data import DiscreteDistribution, PointCloud, same_cloud

CLAMP_TOL = 1e-10


class NumericalDegeneracyError(ArithmeticError):
    """A quadratic form that should be PSD came out clearly negative."""


@dataclass(frozen=True)
class GaussianKernel:
    """k(x, y) = exp(-|x - y|^2 / epsilon)."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    def __call__(self, x, y) -> float:
        return kernel_eval(self, x, y)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    cloud: PointCloud
    kernel: GaussianKernel

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def kernel_eval(k: GaussianKernel, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.exp(-np.sum((x - y) ** 2) / k.epsilon))


def gram(k: GaussianKernel, cloud: PointCloud) -> GramMatrix:
    D = _accel.sqdist(cloud.points, cloud.points)
    K = np.exp(-D / k.epsilon)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    K.setflags(write=False)
    return GramMatrix(K, cloud, k)


def quad_form(K, w) -> float:
    """w^T K w for any symmetric matrix (or GramMatrix)."""
    K = np.asarray(K)
    w = np.asarray(w, dtype=np.float64)
    if K.ndim != 2 or w.shape != (K.shape[0],):
        raise ValueError(f"length mismatch: matrix {K.shape}, vector {w.shape}")
    return float(w @ (K @ w))


def clamp_nonneg(value: float, tol: float = CLAMP_TOL) -> float:
    if value >= 0:
        return value
    if value >= -tol:
        return 0.0
    raise NumericalDegeneracyError(f"quadratic form is {value:.3e}, input is not PSD")


def mmd_sq(K: GramMatrix, a: DiscreteDistribution, b: DiscreteDistribution) -> float:
    """Squared MMD between two distributions on the Gram matrix's cloud."""
    for dist in (a, b):
        if not same_cloud(dist.cloud, K.cloud):
            raise ValueError("distribution is not supported on the Gram matrix's cloud")
    w = a.weights - b.weights
    return clamp_nonneg(quad_form(K.entries, w))
