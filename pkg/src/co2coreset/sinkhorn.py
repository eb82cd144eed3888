"""Log-domain Sinkhorn: entropic OT potentials, self-plans and the debiased divergence.

Cost is the squared Euclidean distance and the entropic penalty is
``epsilon * KL(pi | mu x nu)``, so ``OT = sum(phi * a) + sum(psi * b)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .data import DiscreteDistribution

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
DIVERGENCE_CLAMP = 1e-7


class SinkhornConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"Sinkhorn did not converge in {iterations} iterations (last residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True, eq=False)
class SinkhornProblem:
    source: DiscreteDistribution
    target: DiscreteDistribution
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.source.cloud.d != self.target.cloud.d:
            raise ValueError("source and target live in different dimensions")

    @property
    def symmetric(self) -> bool:
        return self.source.same_as(self.target)

    def cost(self) -> np.ndarray:
        return _accel.sqdist(self.source.points, self.target.points)


@dataclass(frozen=True, eq=False)
class SinkhornSolution:
    phi: np.ndarray
    psi: np.ndarray
    ot_value: float
    iterations: int
    residual: float
    anchored_at: int
    epsilon: float
    residual_history: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return np.exp(-self.phi / self.epsilon)

    @property
    def v(self) -> np.ndarray:
        return np.exp(-self.psi / self.epsilon)


def _logw(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def _extend(points_at, points_from, pot, logw, eps):
    """Evaluate the Schroedinger extension of a potential at new points."""
    C = _accel.sqdist(np.atleast_2d(points_at), points_from)
    return _accel.softmin(C, pot, logw, eps)


def anchor(phi, psi, source_points, target_points, a_logw, b_logw, eps, index=0):
    """Shift (phi + c, psi - c) so that phi(x0) = psi(x0) at source point ``index``.

    psi is evaluated at x0 through its Schroedinger extension, which commutes
    with the shift, so the anchored pair is a canonical representative.
    """
    x0 = source_points[index]
    psi_x0 = _extend(x0, source_points, phi, a_logw, eps)[0]
    c = 0.5 * (psi_x0 - phi[index])
    return phi + c, psi - c


def solve(problem: SinkhornProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          init_psi=None) -> SinkhornSolution:
    """Solve the Schroedinger system in the log domain.

    Self-problems (identical points and weights) use the damped averaged
    update ``phi <- (phi + T(phi)) / 2`` with ``psi = phi``; the rest alternate
    phi/psi soft-min updates. The stopping threshold is ``tol * min(1, eps)``
    on the sup-norm change of the potentials, which keeps marginal errors
    below ``10 * tol`` at small epsilon too. ``init_psi`` warm-starts the
    target potential of a non-symmetric problem.
    """
    if not tol > 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    eps = float(problem.epsilon)
    a = problem.source.weights
    b = problem.target.weights
    la, lb = _logw(a), _logw(b)
    C = problem.cost()
    stop = tol * min(1.0, eps)
    history = []

    if problem.symmetric:
        phi = _accel.softmin(C, np.zeros_like(a), la, eps, CT=C)
        res = np.inf
        it = 0
        while it < max_iter:
            it += 1
            new = 0.5 * (phi + _accel.softmin(C, phi, la, eps, CT=C))
            res = float(np.max(np.abs(new - phi)))
            phi = new
            history.append(res)
            if res < stop:
                break
        else:
            raise SinkhornConvergenceError(it, res)
        psi = phi.copy()
    else:
        CT = np.ascontiguousarray(C.T)
        psi = np.zeros_like(b) if init_psi is None else np.array(init_psi, dtype=np.float64)
        phi = _accel.softmin(C, psi, lb, eps, CT=CT)
        res = np.inf
        it = 0
        while it < max_iter:
            it += 1
            psi_new = _accel.softmin(CT, phi, la, eps, CT=C)
            phi_new = _accel.softmin(C, psi_new, lb, eps, CT=CT)
            res = float(max(np.max(np.abs(phi_new - phi)), np.max(np.abs(psi_new - psi))))
            phi, psi = phi_new, psi_new
            history.append(res)
            if res < stop:
                break
        else:
            raise SinkhornConvergenceError(it, res)
        # finish on a psi update: column marginals exact, row error below the last change
        psi = _accel.softmin(CT, phi, la, eps, CT=C)
        phi, psi = anchor(phi, psi, problem.source.points, problem.target.points, la, lb, eps)

    value = float(np.dot(phi[a > 0], a[a > 0]) + np.dot(psi[b > 0], b[b > 0]))
    return SinkhornSolution(
        phi=phi,
        psi=psi,
        ot_value=value,
        iterations=it,
        residual=res,
        anchored_at=0,
        epsilon=eps,
        residual_history=np.asarray(history),
    )


def marginal_residual(problem: SinkhornProblem, sol: SinkhornSolution) -> float:
    """Sup-norm violation of both marginal constraints."""
    C = problem.cost()
    a, b, eps = problem.source.weights, problem.target.weights, sol.epsilon
    P = a[:, None] * b[None, :] * np.exp((sol.phi[:, None] + sol.psi[None, :] - C) / eps)
    rows = P.sum(axis=1)[a > 0] / a[a > 0]
    cols = P.sum(axis=0)[b > 0] / b[b > 0]
    return float(max(np.max(np.abs(rows - 1)), np.max(np.abs(cols - 1))))


def ot_eps(mu: DiscreteDistribution, nu: DiscreteDistribution, epsilon: float,
           tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, init_psi=None) -> float:
    """Entropic OT value, computed on the supports only.

    ``init_psi`` (length ``nu.n``) warm-starts the target potential.
    """
    mu_s, nu_s = mu.restrict(), nu.restrict()
    if mu.same_as(nu):
        nu_s = mu_s
    if init_psi is not None:
        init_psi = np.asarray(init_psi)[nu.support]
    return solve(SinkhornProblem(mu_s, nu_s, epsilon), tol, max_iter, init_psi=init_psi).ot_value


def divergence(mu: DiscreteDistribution, nu: DiscreteDistribution, epsilon: float,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
               ot_mu_mu: float | None = None, clamp: bool = True, init_psi=None) -> float:
    """Debiased Sinkhorn divergence S(mu, nu).

    ``ot_mu_mu`` lets callers reuse an already computed OT(mu, mu);
    ``init_psi`` warm-starts the cross problem's potential on nu.
    """
    if mu.same_as(nu):
        return 0.0
    oxy = ot_eps(mu, nu, epsilon, tol, max_iter, init_psi=init_psi)
    oxx = ot_eps(mu, mu, epsilon, tol, max_iter) if ot_mu_mu is None else ot_mu_mu
    oyy = ot_eps(nu, nu, epsilon, tol, max_iter)
    s = oxy - 0.5 * (oxx + oyy)
    if clamp and -DIVERGENCE_CLAMP <= s < 0:
        return 0.0
    return float(s)


@dataclass(frozen=True, eq=False)
class SelfPlan:
    """Entropic self-transport plan of a distribution and its potential."""

    plan: np.ndarray
    weights: np.ndarray
    epsilon: float
    solution: SinkhornSolution

    @property
    def n(self) -> int:
        return self.plan.shape[0]

    def scaled(self) -> np.ndarray:
        """n * pi, the Markov operator whose spectrum lies in [0, 1]."""
        return self.n * self.plan


def self_plan(mu: DiscreteDistribution, epsilon: float, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> SelfPlan:
    problem = SinkhornProblem(mu, mu, epsilon)
    sol = solve(problem, tol, max_iter)
    P = _accel.self_plan_matrix(problem.cost(), sol.phi, mu.weights, sol.epsilon)
    P = 0.5 * (P + P.T)
    P.setflags(write=False)
    return SelfPlan(P, mu.weights, sol.epsilon, sol)
