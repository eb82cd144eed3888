"""Randomized fixed-rank Nystrom approximation and spectral tail sums."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg


class NystromError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class PsdFactor:
    """A ~= U diag(lam) U^T with orthonormal U and nonincreasing lam >= 0."""

    U: np.ndarray
    lam: np.ndarray
    sketch_width: int
    nu_shift: float

    @property
    def rank(self) -> int:
        return self.lam.shape[0]

    def dense(self) -> np.ndarray:
        return (self.U * self.lam) @ self.U.T


def _as_operator(A):
    if hasattr(A, "shape") and hasattr(A, "__matmul__"):
        return A
    return np.asarray(A, dtype=np.float64)


def nystrom(A, r: int, sketch_width: int, seed=None, shift_scale: float | None = None,
            max_shift_scale: float = 1e-10, include=None) -> PsdFactor:
    """Rank-r Nystrom approximation of a PSD operator from a Gaussian sketch.

    ``A`` is a dense matrix or anything with ``.shape`` supporting ``A @ X``
    for an n x k block ``X``. The sketch is orthonormalized, stabilized by a
    shift ``nu = shift_scale * ||A Omega||_2`` (machine epsilon by default)
    and the shift is removed from the returned eigenvalues. If the Cholesky
    factorization breaks down the shift is raised tenfold, up to
    ``max_shift_scale``, before giving up.

    ``include`` (n or n x k) are directions placed in the sketch ahead of the
    Gaussian columns; an exact eigenvector passed this way is recovered
    exactly. They count towards ``sketch_width``.
    """
    A = _as_operator(A)
    n = A.shape[0]
    if not 1 <= r <= sketch_width:
        raise ValueError(f"need 1 <= r <= sketch_width, got r={r}, sketch_width={sketch_width}")
    if sketch_width > n:
        warnings.warn(f"sketch width {sketch_width} exceeds n={n}; clamped", stacklevel=2)
        sketch_width = n
        r = min(r, n)
    mu = np.finfo(np.float64).eps if shift_scale is None else shift_scale

    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n, sketch_width))
    if include is not None:
        extra = np.asarray(include, dtype=np.float64).reshape(n, -1)
        if extra.shape[1] > sketch_width:
            raise ValueError("more included directions than sketch columns")
        omega[:, : extra.shape[1]] = extra
    omega, _ = np.linalg.qr(omega)
    Y0 = np.asarray(A @ omega, dtype=np.float64)
    ynorm = np.linalg.norm(Y0, 2)
    while True:
        nu = mu * ynorm
        Y = Y0 + nu * omega
        B = omega.T @ Y
        try:
            C = linalg.cholesky(0.5 * (B + B.T), lower=False)
            break
        except np.linalg.LinAlgError:
            mu *= 10.0
            if mu > max_shift_scale:
                raise NystromError(
                    "Cholesky of the sketched core failed; the operator looks indefinite. "
                    "Retry with a larger shift_scale."
                ) from None
    # Y C^{-1} with C upper triangular
    F = linalg.solve_triangular(C, Y.T, trans="T", lower=False).T
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    U, s = U[:, :r], s[:r]
    lam = np.maximum(0.0, s**2 - nu)
    return PsdFactor(U=U, lam=lam, sketch_width=sketch_width, nu_shift=float(nu))


def trace_norm(M) -> float:
    """Nuclear norm of a symmetric matrix."""
    return float(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T))).sum())


@dataclass(frozen=True)
class TailSum:
    """values[i] = sum of eigenvalues beyond the i largest (values[n] == 0)."""

    values: np.ndarray
    eigenvalues: np.ndarray

    def __getitem__(self, i):
        return self.values[i]

    def first_below(self, threshold: float) -> int:
        """Smallest i >= 1 with values[i] <= threshold."""
        hits = np.flatnonzero(self.values[1:] <= threshold)
        return int(hits[0]) + 1


def tail_sum(K_over_n) -> TailSum:
    M = np.asarray(K_over_n, dtype=np.float64)
    ev = np.clip(np.linalg.eigvalsh(0.5 * (M + M.T))[::-1], 0.0, None)
    # suffix sums: values[i] = sum_{j >= i} ev[j] in 0-based, i.e. beyond the top i
    tails = np.concatenate([np.cumsum(ev[::-1])[::-1], [0.0]])
    return TailSum(values=tails, eigenvalues=ev)
