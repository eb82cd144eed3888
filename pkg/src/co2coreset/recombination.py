"""Caratheodory recombination onto convexly weighted coresets.

Both entry points reduce the support of a discrete distribution one point at
a time while conserving a set of linear moments. Each elimination moves the
weights along a vector of the orthogonal complement of the moment columns;
the vector is taken from the null space of the moment matrix restricted to
p + 1 support points (p = number of independent moments), so every step is
sparse and costs O(p^3) instead of touching all n coordinates.

A step may move either way along its null vector until a weight hits zero.
When an error matrix is supplied the end point with the smaller quadratic
error is kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import DiscreteDistribution, PointCloud
from .lowrank import PsdFactor

RANK_TOL = 1e-10
NEG_TOL = 1e-8


class RecombinationError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class MomentSystem:
    """Columns of ``basis`` are the functions whose moments are conserved.

    More than n columns are accepted; :meth:`independent` reduces them to at
    most n.
    """

    basis: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=np.float64)
        if B.ndim != 2:
            raise ValueError(f"basis must be an n x p matrix, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise ValueError("basis has non-finite entries")
        object.__setattr__(self, "basis", B)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"c{j}" for j in range(B.shape[1])))

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def p(self) -> int:
        return self.basis.shape[1]

    def independent(self, rtol: float = RANK_TOL) -> tuple["MomentSystem", tuple]:
        """Greedy in-order selection of a maximal independent column subset.

        Returns the reduced system and the names of the dropped columns.
        """
        B = self.basis
        Q = np.empty_like(B)
        keep, dropped = [], []
        for j in range(B.shape[1]):
            col = B[:, j]
            nrm = np.linalg.norm(col)
            if nrm == 0:
                dropped.append(self.names[j])
                continue
            r = col / nrm
            k = len(keep)
            for _ in range(2):
                r = r - Q[:, :k] @ (Q[:, :k].T @ r)
            rn = np.linalg.norm(r)
            if rn <= rtol:
                dropped.append(self.names[j])
                continue
            Q[:, k] = r / rn
            keep.append(j)
        reduced = MomentSystem(B[:, keep], tuple(self.names[j] for j in keep))
        return reduced, tuple(dropped)

    def residual(self, w_a, w_b) -> np.ndarray:
        return self.basis.T @ (np.asarray(w_a) - np.asarray(w_b))


@dataclass(frozen=True, eq=False)
class Coreset:
    parent: PointCloud
    indices: np.ndarray
    weights: np.ndarray
    method: str
    m_target: int
    seed: int | None = None
    tau: float | None = None
    quad_error: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        order = np.argsort(idx, kind="stable")
        idx, w = idx[order], w[order]
        if idx.size == 0 or idx.size != w.size:
            raise ValueError("coreset needs matching, non-empty indices and weights")
        if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.parent.n:
            raise ValueError("coreset indices must be distinct rows of the parent cloud")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("coreset weights must be positive and sum to one")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_dense(cls, parent: PointCloud, w, **kw) -> "Coreset":
        w = np.asarray(w, dtype=np.float64)
        idx = np.flatnonzero(w > 0)
        return cls(parent, idx, w[idx] / w[idx].sum(), **kw)

    @property
    def size(self) -> int:
        return self.indices.size

    def dense_weights(self) -> np.ndarray:
        w = np.zeros(self.parent.n)
        w[self.indices] = self.weights
        return w

    def distribution(self) -> DiscreteDistribution:
        return DiscreteDistribution.normalized(self.parent, self.dense_weights())

    def with_weights(self, weights, method: str | None = None, **kw) -> "Coreset":
        """Same support (entries of zero weight are dropped), new weights."""
        weights = np.asarray(weights, dtype=np.float64)
        keep = weights > 0
        return replace(
            self,
            indices=self.indices[keep],
            weights=weights[keep] / weights[keep].sum(),
            method=method or self.method,
            **kw,
        )


class _Eliminator:
    """Sequential support reduction conserving ``A.T @ w``."""

    def __init__(self, w, A, K=None):
        self.w = np.array(w, dtype=np.float64)
        self.w0 = self.w.copy()
        self.K = K
        if K is not None:
            self.Kd = np.zeros_like(self.w)
        self.A = A
        self.p = A.shape[1]
        self.steps = 0
        self.last_delta = None  # (rows, change) of the most recent step

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.w > 0)

    def step(self, orient=None) -> bool:
        """Zero at least one weight. Returns False when nothing can be eliminated.

        ``orient``: if given, the null vector is signed so that its inner
        product with ``orient`` is nonnegative and only that direction is
        used; otherwise the direction reaching the boundary first is taken.
        """
        S = self.support
        if S.size <= self.p:
            return False
        W = S[: self.p + 1]
        M = self.A[W]
        Q, _ = np.linalg.qr(M, mode="complete")
        v = Q[:, -1]
        mu = self.w[W]

        if orient is not None:
            if v @ orient[W] < 0:
                v = -v
            alpha = self._ratio(mu, v)
        else:
            a_pos = self._ratio(mu, v)
            a_neg = self._ratio(mu, -v)
            if self.K is None:
                alpha = a_pos if a_pos <= a_neg else -a_neg
            else:
                # both boundary points are feasible; keep the one with the smaller error
                alpha = min((a_pos, -a_neg), key=lambda a: self._err_after(W, -a * v))

        new = mu - alpha * v
        hit = np.argmin(np.where(alpha * v > 0, mu / np.abs(alpha * v), np.inf))
        # coordinates that reach zero up to rounding are tied with the pivot
        tie = new <= 64 * np.finfo(float).eps * (mu + np.abs(alpha * v))
        if new.min() < -NEG_TOL:
            raise RecombinationError(f"weight went negative ({new.min():.3e})")
        new[tie] = 0.0
        new[hit] = 0.0
        self.last_delta = (W, new - mu)
        if self.K is not None:
            self.Kd += self.K[:, W] @ (new - mu)
        self.w[W] = new
        self.steps += 1
        return True

    @property
    def err(self) -> float:
        """(w - w0)^T K (w - w0), tracked incrementally."""
        return float((self.w - self.w0) @ self.Kd)

    def _err_after(self, W, delta) -> float:
        d = self.w - self.w0
        KdW = self.K[np.ix_(W, W)] @ delta
        return float(d @ self.Kd + 2.0 * delta @ self.Kd[W] + delta @ KdW)

    @staticmethod
    def _ratio(mu, v) -> float:
        pos = v > 0
        if not np.any(pos):
            return np.inf
        return float(np.min(mu[pos] / v[pos]))


def _system(n, U, k_diag=None, with_kdiag=True):
    cols = [np.ones(n)]
    names = ["mass"]
    if U is not None and U.size:
        cols.extend(U.T)
        names.extend(f"u{j}" for j in range(U.shape[1]))
    if with_kdiag and k_diag is not None:
        cols.append(np.asarray(k_diag, dtype=np.float64))
        names.append("kdiag")
    return MomentSystem(np.column_stack(cols), tuple(names))


def _tag(base, dropped):
    # a constant diagonal duplicates the mass column and is expected
    notable = [d for d in dropped if d != "kdiag"]
    return f"{base}[dropped:{','.join(notable)}]" if notable else base


def recombine(input: DiscreteDistribution, U, k_diag, lam=None, seed=None, m: int | None = None,
              quad=None) -> Coreset:
    """Reduce ``input`` to at most ``m = U.shape[1] + 1`` points.

    Conserves total mass and the moments of every column of ``U``. While the
    support exceeds the number of independent moments plus the diagonal
    column, the diagonal moment is conserved too; the closing steps move
    along the null vector of ``[1, U]`` oriented so the diagonal moment can
    only decrease, i.e. ``k_diag @ (w_input - w_coreset) >= 0``.

    Each free elimination can stop at either end of the feasible segment.
    Without ``quad`` the nearer end is taken; with an error matrix ``quad``
    the end with the smaller ``(w - w_input)^T quad (w - w_input)`` is.
    """
    U = np.zeros((input.n, 0)) if U is None else np.asarray(U, dtype=np.float64).reshape(input.n, -1)
    m = U.shape[1] + 1 if m is None else int(m)
    if m < 1:
        raise ValueError("m must be positive")
    k_diag = np.asarray(k_diag, dtype=np.float64)
    if input.support.size <= m:
        return Coreset.from_dense(input.cloud, input.weights, method="recombination",
                                  m_target=m, seed=seed, info={"steps": 0, "dropped": []})

    full, dropped_full = _system(input.n, U, k_diag).independent()
    base, dropped_base = _system(input.n, U, with_kdiag=False).independent()
    elim = _Eliminator(input.weights, full.basis, None if quad is None else np.asarray(quad))
    while elim.step():
        pass
    elim.A, elim.p = base.basis, base.p
    while elim.step(orient=k_diag):
        pass

    w = elim.w
    if w.min() < 0:
        raise RecombinationError(f"negative weight {w.min():.3e}")
    info = {"steps": elim.steps, "dropped": list(dropped_full), "m_target": m}
    if lam is not None:
        info["lam"] = [float(x) for x in np.asarray(lam)[: m]]
    return Coreset.from_dense(input.cloud, w, method=_tag("recombination", dropped_full),
                              m_target=m, seed=seed, info=info)


def sweep(input: DiscreteDistribution, factor: PsdFactor, quad, m_max: int, tau: float,
          k_diag=None, seed=None) -> Coreset:
    """Single recombination pass that stops once the quadratic error exceeds ``tau``.

    ``quad`` is the symmetric error matrix K; after every elimination the
    error ``(mu - input)^T K (mu - input)`` is updated and the last iterate
    with error <= tau is returned. Without ``k_diag`` the conserved system is
    the leading ``m_max - 1`` eigenvectors plus mass; with it, the pass
    follows the same schedule as :func:`recombine` so an unbinding threshold
    reproduces the fixed-size result.
    """
    if m_max < 2:
        raise ValueError("m_max must be >= 2")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    K = np.asarray(quad, dtype=np.float64)
    U = factor.U[:, : m_max - 1]
    n = input.n

    base, dropped = _system(n, U, with_kdiag=False).independent()
    schedule = []
    if k_diag is not None:
        k_diag = np.asarray(k_diag, dtype=np.float64)
        full, dropped = _system(n, U, k_diag).independent()
        schedule.append((full.basis, None))
        schedule.append((base.basis, k_diag))
    else:
        schedule.append((base.basis, None))

    elim = _Eliminator(input.weights, schedule[0][0], K)
    err = 0.0
    prev = elim.w.copy()
    prev_err = 0.0
    max_steps = n - m_max + 1
    crossed = False
    for A, orient in schedule:
        elim.A, elim.p = A, A.shape[1]
        while elim.steps < max_steps:
            if not elim.step(orient=orient):
                break
            err = elim.err
            if err > tau:
                crossed = True
                break
            prev, prev_err = elim.w.copy(), err
        if crossed:
            break

    info = {"steps": elim.steps, "dropped": list(dropped), "crossed": crossed, "m_max": m_max}
    size = int(np.count_nonzero(prev > 0))
    return Coreset.from_dense(input.cloud, prev, method=_tag("recombination-sweep", dropped),
                              m_target=size, seed=seed, tau=float(tau),
                              quad_error=max(prev_err, 0.0), info=info)
