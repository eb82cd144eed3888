"""The CO2 pipeline for Sinkhorn coresets.

Kernel selection turns the data into the entropic self-plan ``pi`` of the
empirical measure; the second-order expansion of the Sinkhorn divergence
around it is the quadratic form

    S(P_n, P_n + w) ~= (eps / 2) * n * w^T (I - A^2)^+ A w,    A = n * pi,

which on the subspace left after recombination is, up to an exponentially
small factor, ``(eps / 2) * n * w^T A w`` (the default fast path). Kernel
compression then runs recombination against the Nystrom eigenvectors of A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import sinkhorn
from .data import DiscreteDistribution
from .kernels import GramMatrix, clamp_nonneg
from .lowrank import PsdFactor, nystrom
from .recombination import Coreset, recombine, sweep

UNIT_EIG_TOL = 1e-8

# stream ids for Co2Config.seed fan-out
SKETCH, TAU, BASELINE, TRIAL = 0, 1, 2, 3


def seed_stream(seed: int, *keys: int) -> np.random.SeedSequence:
    """Counter-based child stream of a master seed."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_stream(seed, *keys))


@dataclass(frozen=True)
class Co2Config:
    epsilon: float
    m: int | None = None
    tau: float | None = None
    m_max: int | None = None
    beta: float | None = None
    theta: int = 3
    seed: int = 0
    tol: float = sinkhorn.DEFAULT_TOL
    max_iter: int = sinkhorn.DEFAULT_MAX_ITER
    use_exact_G: bool = False
    hutchinson_probes: int = 0
    tau_draws: int = 100_000

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.theta < 2:
            raise ValueError("oversampling theta must be >= 2")
        if self.m is not None and (self.tau is not None or self.beta is not None):
            raise ValueError("give either a target size m or a threshold (tau/beta), not both")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be >= 1")
        if self.tau is not None and self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")

    @property
    def fixed_size(self) -> bool:
        return self.m is not None

    def rank_for(self, n: int) -> int:
        if self.m is not None:
            return min(self.m, n)
        return min(self.m_max or default_m_max(n), n)

    def beta_for(self, n: int) -> float:
        if self.beta is not None:
            return self.beta
        return min(0.5, 1.0 / math.log(max(n, 3)))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_m_max(n: int) -> int:
    return max(2, min(n, math.ceil(math.sqrt(n))))


@dataclass(frozen=True, eq=False)
class SinkhornQuadraticForm:
    """Second-order Sinkhorn form on signed weight vectors over the data.

    ``xi_fast``: q(w) = (eps/2) n w^T A w with A = n pi.
    ``G_exact``: q(w) = (eps/2) n sum_i lam_i / (1 - lam_i^2) <w, u_i>^2 over
    the Nystrom eigenpairs of A with lam_i < 1 - 1e-8; ``remainder`` adds the
    spectrum beyond the factor at first order.
    """

    mode: str
    plan: sinkhorn.SelfPlan
    eig: PsdFactor
    epsilon: float
    remainder: bool = False
    hutchinson_probes: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("xi_fast", "G_exact"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def scale(self) -> float:
        return 0.5 * self.epsilon * self.n

    @cached_property
    def A(self) -> np.ndarray:
        return self.plan.scaled()

    @property
    def _free(self) -> np.ndarray:
        return self.eig.lam < 1 - UNIT_EIG_TOL

    @cached_property
    def spectral_weights(self) -> np.ndarray:
        """Per-eigenpair multipliers of <w, u_i>^2 (mass eigenpairs get 0)."""
        lam = self.eig.lam
        out = np.zeros_like(lam)
        free = self._free
        if self.mode == "xi_fast":
            out[free] = lam[free]
        else:
            out[free] = lam[free] / (1 - lam[free] ** 2)
        return self.scale * out

    @cached_property
    def _matrix(self) -> np.ndarray:
        if self.mode == "xi_fast":
            M = self.scale * self.A
        else:
            U = self.eig.U
            M = (U * self.spectral_weights) @ U.T
            if self.remainder:
                M = M + self.scale * (self.A - self.eig.dense())
        M = 0.5 * (M + M.T)
        M.setflags(write=False)
        return M

    def matrix(self) -> np.ndarray:
        return self._matrix

    def __call__(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        return clamp_nonneg(float(w @ (self._matrix @ w)))

    def on_factor(self, w, mode: str | None = None) -> float:
        """The form restricted to the span of the factor's eigenvectors."""
        c = self.eig.U.T @ np.asarray(w, dtype=np.float64)
        lam = np.where(self._free, self.eig.lam, 0.0)
        mult = lam if (mode or self.mode) == "xi_fast" else lam / (1 - lam**2)
        return float(self.scale * np.sum(mult * c**2))

    def free_factor(self) -> PsdFactor:
        """The factor with the unit (mass) eigenpairs removed."""
        keep = self._free
        return PsdFactor(self.eig.U[:, keep], self.eig.lam[keep], self.eig.sketch_width,
                         self.eig.nu_shift)

    @cached_property
    def _diag(self) -> np.ndarray:
        if self.mode == "G_exact" and self.hutchinson_probes > 0:
            return hutchinson_diag(self.exact_matvec, self.hutchinson_probes, self.seed, n=self.n)
        return np.diag(self._matrix).copy()

    def diag(self) -> np.ndarray:
        return self._diag

    def exact_matvec(self, X):
        """Apply the full empirical Hadamard operator (eps/2) n (I - A^2)^+ A.

        The unit (mass) eigendirections from the factor are projected out and
        (I - A^2) is inverted by conjugate gradients on that complement.
        """
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = X[:, None] if single else X
        P = self.eig.U[:, ~self._free]
        A = self.A
        n = self.n

        def proj(v):
            return v - P @ (P.T @ v)

        op = LinearOperator((n, n), matvec=lambda v: proj(v - A @ (A @ proj(v))) + P @ (P.T @ v),
                            dtype=np.float64)
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            rhs = proj(A @ X[:, j])
            z, _ = cg(op, rhs, rtol=1e-12, atol=0.0, maxiter=10 * n)
            out[:, j] = self.scale * proj(z)
        return out[:, 0] if single else out

    def tau_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the form's matrix divided by n, mass direction removed."""
        return self.spectral_weights / self.n


def kernel_selection(data: DiscreteDistribution, config: Co2Config,
                     plan: sinkhorn.SelfPlan | None = None) -> SinkhornQuadraticForm:
    """Solve the self-transport problem and factor its plan.

    A ``plan`` computed earlier for the same data and epsilon can be passed
    to skip the Sinkhorn solve.
    """
    if plan is None:
        plan = sinkhorn.self_plan(data, config.epsilon, config.tol, config.max_iter)
    elif plan.epsilon != config.epsilon or plan.n != data.n:
        raise ValueError("plan does not belong to this data/epsilon")
    n = data.n
    r = config.rank_for(n)
    width = min(n, config.theta * r)
    # A maps the weight direction to itself (exactly so for uniform weights);
    # seeding the sketch with it pins the unit eigenvalue
    eig = nystrom(plan.scaled(), r, width, seed=seed_stream(config.seed, SKETCH),
                  include=data.weights)
    mode = "G_exact" if config.use_exact_G else "xi_fast"
    return SinkhornQuadraticForm(mode, plan, eig, config.epsilon,
                                 hutchinson_probes=config.hutchinson_probes,
                                 seed=config.seed)


def select_tau(eig, beta: float, n: int, draws: int = 100_000, seed=0, chunk: int = 10_000) -> float:
    """beta-quantile of sum_i lam_i chi^2_i(1), divided by n.

    ``eig`` is a PsdFactor or a vector of eigenvalues of the reference
    operator normalized by n.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if draws < 1000:
        raise ValueError("need at least 1000 draws")
    lam = np.asarray(eig.lam if isinstance(eig, PsdFactor) else eig, dtype=np.float64)
    lam = lam[lam > 0]
    if lam.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    samples = np.empty(draws)
    for start in range(0, draws, chunk):
        k = min(chunk, draws - start)
        samples[start:start + k] = rng.chisquare(1.0, size=(k, lam.size)) @ lam
    return float(np.quantile(samples, beta) / n)


def _matrix_of(form) -> np.ndarray:
    if isinstance(form, SinkhornQuadraticForm):
        return form.matrix()
    if isinstance(form, GramMatrix):
        return form.entries
    return np.asarray(form, dtype=np.float64)


def compress(data: DiscreteDistribution, config: Co2Config, form: SinkhornQuadraticForm | None = None) -> Coreset:
    """Compress ``data`` into a convexly weighted coreset."""
    n = data.n
    w_in = data.weights
    if config.fixed_size and config.m >= data.support.size:
        return Coreset.from_dense(data.cloud, w_in, method="co2", m_target=config.m,
                                  seed=config.seed, quad_error=0.0, info={"steps": 0})
    if form is None:
        form = kernel_selection(data, config)
    k_diag = form.diag()
    # mass is conserved by recombination on its own; spend the eigenvectors elsewhere
    free = form.free_factor()
    if config.fixed_size:
        m = config.m
        cs = recombine(data, free.U[:, : m - 1], k_diag, lam=free.lam, seed=config.seed, m=m,
                       quad=form.matrix())
        method = cs.method.replace("recombination", "co2")
        tau = None
    else:
        m_max = config.rank_for(n)
        tau = config.tau
        if tau is None:
            tau = select_tau(form.tau_eigenvalues(), config.beta_for(n), n, config.tau_draws,
                             seed=seed_stream(config.seed, TAU))
        cs = sweep(data, free, form.matrix(), m_max, tau, k_diag=k_diag, seed=config.seed)
        method = cs.method.replace("recombination-sweep", "co2-sweep")
    q = form(cs.dense_weights() - w_in)
    info = dict(cs.info, form=form.mode, sinkhorn_iterations=form.plan.solution.iterations)
    return Coreset(cs.parent, cs.indices, cs.weights, method=method, m_target=cs.m_target,
                   seed=config.seed, tau=tau, quad_error=q, info=info)


def project_simplex(c) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    c = np.asarray(c, dtype=np.float64)
    u = np.sort(c)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, c.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    return np.maximum(c - css[rho] / (rho + 1), 0.0)


def kkt_residual(M_SS, b, w) -> float:
    """Norm of the projected-gradient map for min w^T M w - 2 b^T w on the simplex."""
    g = 2.0 * (M_SS @ w - b)
    return float(np.linalg.norm(w - project_simplex(w - g)))


def refine_weights(coreset: Coreset, form, target=None, max_iter: int = 500, rtol: float = 1e-12) -> Coreset:
    """Re-optimize the coreset weights for q(w - target) on its fixed support.

    Projected gradient with exact line search, interleaved with a Newton
    step on the current face (also exactly line-searched), so q never
    increases.
    """
    M = _matrix_of(form)
    n = coreset.parent.n
    if target is None:
        target = form.plan.weights if isinstance(form, SinkhornQuadraticForm) else np.full(n, 1.0 / n)
    target = np.asarray(target, dtype=np.float64)
    S = coreset.indices
    if S.size == 1:
        return coreset
    M_SS = M[np.ix_(S, S)]
    b = M[S] @ target
    const = float(target @ (M @ target))
    w = coreset.weights.copy()

    def f(x):
        return float(x @ (M_SS @ x) - 2.0 * b @ x + const)

    def line(x, p, t_max):
        # exact minimizer of f(x + t p) on [0, t_max]
        curv = float(p @ (M_SS @ p))
        slope = 2.0 * float(p @ (M_SS @ x) - b @ p)
        if slope >= 0:
            return 0.0
        if curv <= 0:
            return t_max
        return min(t_max, -slope / (2.0 * curv))

    L = 2.0 * max(np.linalg.eigvalsh(M_SS)[-1], 1e-300)
    fx = f(w)
    prev = w.copy()
    for _ in range(max_iter):
        g = 2.0 * (M_SS @ w - b)
        p = project_simplex(w - g / L) - w
        w = w + line(w, p, 1.0) * p

        free = w > 0
        k = int(free.sum())
        if k > 1:
            Mf = M_SS[np.ix_(free, free)]
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = 2.0 * Mf
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            rhs = np.concatenate([-(2.0 * (Mf @ w[free]) - 2.0 * b[free]), [0.0]])
            step = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
            p = np.zeros_like(w)
            p[free] = step - step.sum() / k
            neg = p < 0
            t_max = float(np.min(-w[neg] / p[neg])) if np.any(neg) else np.inf
            t = line(w, p, min(1.0, t_max))
            if t > 0:
                w = w + t * p
                if t == t_max:
                    w[neg & (w <= 1e-300 + 1e-15 * np.abs(t * p))] = 0.0
        w = np.maximum(w, 0.0)
        w /= w.sum()
        f_new = f(w)
        if f_new > fx:
            # rounding from renormalization; the previous iterate stands
            w = prev
            break
        done = fx - f_new <= rtol * max(abs(fx), 1e-300)
        prev, fx = w.copy(), f_new
        if done:
            break

    q = clamp_nonneg(f(w), 1e-10) if isinstance(form, SinkhornQuadraticForm) else None
    return coreset.with_weights(w, method=coreset.method + "+refined", quad_error=q)


def hutchinson_diag(op, probes: int, seed=0, n: int | None = None) -> np.ndarray:
    """Rademacher estimate of diag(A): mean over probes of z * (A z)."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if callable(op) and not hasattr(op, "shape"):
        if n is None:
            raise ValueError("n is required when op is a callable")
        apply = op
    else:
        A = np.asarray(op, dtype=np.float64)
        n = A.shape[0]

        def apply(Z):
            return A @ Z

    rng = np.random.default_rng(seed)
    Z = rng.choice(np.array([-1.0, 1.0]), size=(n, probes))
    AZ = np.asarray(apply(Z), dtype=np.float64).reshape(n, probes)
    return np.mean(Z * AZ, axis=1)


def quad_approx_error(data: DiscreteDistribution, coreset: Coreset, config: Co2Config,
                      form: SinkhornQuadraticForm | None = None, ot_data: float | None = None) -> float:
    """|S - q| / S for the coreset, +inf when S is numerically zero."""
    if form is None:
        form = kernel_selection(data, config)
    if ot_data is None:
        ot_data = form.plan.solution.ot_value
    S = sinkhorn.divergence(data, coreset.distribution(), config.epsilon, config.tol,
                            config.max_iter, ot_mu_mu=ot_data, clamp=False)
    if S < 1e-12:
        return math.inf
    q = form(coreset.dense_weights() - data.weights)
    return abs(S - q) / S
