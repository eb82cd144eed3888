import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from co2coreset.co2 import select_tau
from co2coreset.data import DiscreteDistribution, PointCloud, uniform
from co2coreset.kernels import GaussianKernel, gram
from co2coreset.lowrank import PsdFactor, nystrom
from co2coreset.recombination import (Coreset, MomentSystem, _Eliminator, _system, recombine,
                                      sweep)


def cloud(n, d=2, seed=0):
    return PointCloud(np.random.default_rng(seed).normal(size=(n, d)))


def random_case(n, m, seed):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, n))
    A = G @ G.T
    lam, V = np.linalg.eigh(A)
    U = V[:, ::-1][:, : m - 1]
    w = rng.random(n) + 0.05
    return DiscreteDistribution.normalized(cloud(n, seed=seed), w), U, np.diag(A).copy(), A


def test_nothing_to_eliminate():
    mu = uniform(cloud(2))
    cs = recombine(mu, np.zeros((2, 1)), np.ones(2))
    np.testing.assert_array_equal(cs.indices, [0, 1])
    np.testing.assert_allclose(cs.weights, [0.5, 0.5])


def test_three_points_matches_exhaustive_oracle():
    mu = uniform(cloud(3))
    u = np.array([[1.0], [0.0], [-1.0]]) / np.sqrt(2)
    k_diag = np.array([3.0, 1.0, 2.0])
    cs = recombine(mu, u, k_diag)
    A = np.column_stack([np.ones(3), u])
    expected = oracles.exhaustive_recombination(mu.weights, A, 2, k_diag)
    np.testing.assert_allclose(cs.dense_weights(), expected, atol=1e-12)


def test_three_points_other_orientation():
    # the diagonal favours the outer pair now
    mu = uniform(cloud(3))
    u = np.array([[1.0], [0.0], [-1.0]]) / np.sqrt(2)
    k_diag = np.array([1.0, 5.0, 1.0])
    cs = recombine(mu, u, k_diag)
    A = np.column_stack([np.ones(3), u])
    expected = oracles.exhaustive_recombination(mu.weights, A, 2, k_diag)
    np.testing.assert_allclose(cs.dense_weights(), expected, atol=1e-12)
    np.testing.assert_allclose(expected, [0.5, 0, 0.5])


def test_ten_points_moments():
    mu, U, k_diag, _ = random_case(10, 4, seed=11)
    cs = recombine(mu, U, k_diag)
    assert cs.size <= 4
    assert np.max(np.abs(U.T @ (cs.dense_weights() - mu.weights))) <= 1e-8
    assert k_diag @ (mu.weights - cs.dense_weights()) >= -1e-8


def test_rank_deficiency_is_tagged():
    mu = uniform(cloud(12))
    rng = np.random.default_rng(2)
    U = rng.normal(size=(12, 3))
    U[:, 2] = U[:, 0] + U[:, 1]
    cs = recombine(mu, U, rng.random(12))
    assert "dropped:u2" in cs.method
    assert np.max(np.abs(U.T @ (cs.dense_weights() - mu.weights))) <= 1e-8
    assert cs.size <= 4


def test_constant_diagonal_is_not_tagged():
    mu, U, _, _ = random_case(15, 5, seed=3)
    cs = recombine(mu, U, np.ones(15))
    assert cs.method == "recombination"


def test_independent_subset_greedy_order():
    B = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.ones(5), np.arange(5.0) ** 2])
    red, dropped = MomentSystem(B, ("a", "b", "c", "d")).independent()
    assert red.names == ("a", "b", "d")
    assert dropped == ("c",)


def test_coreset_validation():
    c = cloud(5)
    with pytest.raises(ValueError):
        Coreset(c, [1, 1], [0.5, 0.5], "x", 2)
    with pytest.raises(ValueError):
        Coreset(c, [0, 1], [0.7, 0.4], "x", 2)
    with pytest.raises(ValueError):
        Coreset(c, [0, 9], [0.5, 0.5], "x", 2)
    cs = Coreset(c, [3, 1], [0.25, 0.75], "x", 2)
    np.testing.assert_array_equal(cs.indices, [1, 3])
    np.testing.assert_allclose(cs.weights, [0.75, 0.25])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_recombine_invariants(seed, with_quad):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    m = int(rng.integers(2, n + 1))
    mu, U, k_diag, A = random_case(n, m, seed)
    cs = recombine(mu, U, k_diag, quad=A if with_quad else None)
    wc = cs.dense_weights()
    assert cs.size <= m
    assert np.all(cs.weights > 0) and abs(cs.weights.sum() - 1) <= 1e-10
    assert np.max(np.abs(U.T @ (wc - mu.weights))) <= 1e-8
    assert k_diag @ (mu.weights - wc) >= -1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_each_step_moves_orthogonally(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    m = int(rng.integers(2, n))
    mu, U, k_diag, A = random_case(n, m, seed)
    system, _ = _system(n, U, k_diag).independent()
    elim = _Eliminator(mu.weights, system.basis, A if seed % 2 else None)
    size = n
    while elim.step():
        rows, delta = elim.last_delta
        full = np.zeros(n)
        full[rows] = delta
        scale = np.abs(delta).max()
        assert abs(full.sum()) <= 1e-10 * max(scale, 1)
        assert np.max(np.abs(U.T @ full)) <= 1e-10 * max(scale, 1)
        assert elim.w.min() >= 0
        new_size = np.count_nonzero(elim.w > 0)
        assert new_size <= size - 1
        size = new_size


def gaussian_problem(n=50, seed=0):
    c = PointCloud(np.random.default_rng(seed).normal(size=(n, 2)))
    K = np.asarray(gram(GaussianKernel(2.0), c))
    return uniform(c), K


def test_sweep_infinite_tau_runs_to_m_max():
    mu, K = gaussian_problem()
    f = nystrom(K / mu.n, 8, 24, seed=1)
    cs = sweep(mu, f, K, m_max=8, tau=np.inf)
    assert cs.size <= 8
    assert cs.info["crossed"] is False
    assert np.max(np.abs(f.U[:, :7].T @ (cs.dense_weights() - mu.weights))) <= 1e-8


def test_sweep_infinite_tau_reproduces_recombine():
    mu, K = gaussian_problem(seed=4)
    f = nystrom(K / mu.n, 6, 18, seed=2)
    k_diag = np.diag(K)
    a = sweep(mu, f, K, m_max=6, tau=np.inf, k_diag=k_diag)
    b = recombine(mu, f.U[:, :5], k_diag, quad=K)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-14)


def test_sweep_zero_tau_stops_immediately():
    mu, K = gaussian_problem()
    f = nystrom(K / mu.n, 5, 15, seed=1)
    cs = sweep(mu, f, K, m_max=5, tau=0.0)
    assert cs.size >= 5
    assert cs.quad_error == 0.0
    assert cs.info["crossed"] is True


def replay_errors(mu, U, K):
    """Quadratic error after each elimination, recomputed from the weights."""
    system, _ = _system(mu.n, U, with_kdiag=False).independent()
    elim = _Eliminator(mu.weights, system.basis, K)
    errs, iterates = [], []
    while elim.step():
        d = elim.w - mu.weights
        errs.append(float(d @ K @ d))
        iterates.append(elim.w.copy())
    return errs, iterates


def test_sweep_stops_before_crossing():
    mu, K = gaussian_problem(n=50, seed=7)
    f = nystrom(K / mu.n, 5, 15, seed=3)
    tau = select_tau(np.linalg.eigvalsh(K / mu.n), 0.05, mu.n, draws=20000, seed=0)
    cs = sweep(mu, f, K, m_max=5, tau=tau)
    assert cs.info["crossed"]
    d = cs.dense_weights() - mu.weights
    assert d @ K @ d <= tau
    errs, iterates = replay_errors(mu, f.U[:, :4], K)
    k = next(i for i, e in enumerate(errs) if e > tau)
    assert k > 0
    np.testing.assert_allclose(cs.dense_weights(), iterates[k - 1], atol=1e-14)
    assert cs.size > 5


def test_sweep_rejects_bad_arguments():
    mu, K = gaussian_problem(n=10)
    f = PsdFactor(np.eye(10)[:, :3], np.ones(3), 3, 0.0)
    with pytest.raises(ValueError):
        sweep(mu, f, K, m_max=1, tau=1.0)
    with pytest.raises(ValueError):
        sweep(mu, f, K, m_max=3, tau=-1.0)
