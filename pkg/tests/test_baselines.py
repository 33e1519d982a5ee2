import warnings

import numpy as np
import pytest

from mgmc.baselines import (
    BaselineConfig,
    SolverDiverged,
    SolverTrace,
    als_objective,
    gmc_complete,
    gmc_objective,
    graph_reg_als,
    mean_predictor,
    nuclear_norm,
    prox_nuclear,
    select_mu,
    svt_complete,
    svt_objective,
)
from mgmc.graph import Graph, laplacian
from mgmc.train import rmse

from conftest import random_graph


def low_rank(rng, m, n, r):
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


def rank2_instance(seed):
    """Rank-2 10 x 10 matrix with exactly 60 observed entries."""
    rng = np.random.default_rng(seed)
    Y = low_rank(rng, 10, 10, 2)
    mask = np.zeros(100, bool)
    mask[rng.permutation(100)[:60]] = True
    return Y, mask.reshape(10, 10)


class TestSVT:
    def test_fully_observed_zero_threshold(self, rng):
        Y = rng.standard_normal((6, 5))
        X = svt_complete(Y, np.ones((6, 5), bool), tau=0.0, iters=5)
        np.testing.assert_allclose(X, Y, atol=1e-12)

    def test_large_threshold_gives_zero(self, rng):
        Y = rng.standard_normal((6, 5))
        X = svt_complete(Y, rng.random((6, 5)) < 0.5, tau=1e6, iters=5)
        assert np.abs(X).max() == 0

    def test_rank2_recovery(self):
        Y, mask = rank2_instance(0)
        X = svt_complete(Y, mask, tau=1e-3, iters=200000, tol=1e-14)
        assert rmse(X, Y, ~mask) < 1e-3

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_converges_to_nuclear_norm_minimizer(self, seed):
        # the exact interpolant Z of least nuclear norm is feasible for the
        # penalized problem with zero residual, so the solver's objective can
        # not exceed tau ||Z||_*; on these instances Z is not the ground truth
        cp = pytest.importorskip("cvxpy")
        Y, mask = rank2_instance(seed)
        Z = cp.Variable(Y.shape)
        cp.Problem(cp.Minimize(cp.normNuc(Z)), [cp.multiply(mask, Z) == mask * Y]).solve()
        tau = 1e-3
        X = svt_complete(Y, mask, tau=tau, iters=100000, tol=1e-14)
        bound = tau * nuclear_norm(Z.value)
        assert svt_objective(X, Y, mask, tau) <= bound * (1 + 1e-6)
        assert svt_objective(X, Y, mask, tau) >= 0.99 * bound

    def test_thresholding_never_increases_singular_values(self, rng):
        for _ in range(10):
            V = rng.standard_normal((7, 5))
            _, before, after = prox_nuclear(V, abs(rng.standard_normal()))
            assert np.all(after >= 0) and np.all(after <= before)

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            svt_complete(np.ones((2, 2)), np.zeros((2, 2), bool), 1.0)


def random_problem(rng, m=8, n=9):
    Lr = laplacian(random_graph(rng, m, 0.4))
    Lc = laplacian(random_graph(rng, n, 0.4))
    Y = low_rank(rng, m, n, 2)
    mask = rng.random((m, n)) < 0.5
    mask[0, 0] = True
    return Y, mask, Lr, Lc


class TestGMC:
    def test_monotone_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            Y, mask, Lr, Lc = random_problem(rng)
            tr = SolverTrace()
            gmc_complete(Y, mask, Lr, Lc, mu=float(rng.uniform(0.1, 10)), iters=200, trace=tr)
            assert np.all(np.diff(tr.objective) <= 1e-12 * max(1, tr.objective[0]))

    def test_data_term_dominates(self, rng):
        m, n = 5, 6
        I_r, I_c = laplacian(Graph.edgeless(m)), laplacian(Graph.edgeless(n))
        Y = rng.standard_normal((m, n))
        mask = rng.random((m, n)) < 0.5
        mask[0, 0] = True
        X = gmc_complete(Y, mask, I_r, I_c, mu=1e6, iters=5000, tol=1e-14)
        np.testing.assert_allclose(X[mask], Y[mask], atol=1e-4)

    def test_gradient_matches_objective(self, rng):
        Y, mask, Lr, Lc = random_problem(rng)
        X = rng.standard_normal(Y.shape)
        mu = 2.0
        G = 2 * Lr.matrix @ X + 2 * X @ Lc.matrix + mu * np.where(mask, X - Y, 0)
        E = rng.standard_normal(Y.shape)
        h = 1e-6
        fd = (gmc_objective(X + h * E, Y, mask, Lr, Lc, mu) - gmc_objective(X - h * E, Y, mask, Lr, Lc, mu)) / (2 * h)
        assert fd == pytest.approx(np.sum(G * E), rel=1e-6)

    def test_divergence_detected(self, rng):
        Y, mask, Lr, Lc = random_problem(rng)
        with pytest.raises(SolverDiverged):
            gmc_complete(Y, mask, Lr, Lc, mu=1.0, lr=50.0, iters=2000)


class TestGRALS:
    def test_objective_non_increasing_per_half_step(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            Y, mask, Lr, Lc = random_problem(rng)
            tr = SolverTrace()
            graph_reg_als(Y, mask, Lr, Lc, mu=float(rng.uniform(0.5, 20)), rank=3, sweeps=15, trace=tr)
            assert len(tr.objective) >= 3
            assert np.all(np.diff(tr.objective) <= 1e-9 * max(1, tr.objective[0]))

    def test_exact_rank_recovery_without_regularizers(self, rng):
        Y = low_rank(rng, 8, 7, 3)
        W, H = graph_reg_als(Y, np.ones(Y.shape, bool), None, None, mu=1.0, rank=3, sweeps=200)
        np.testing.assert_allclose(W @ H.T, Y, atol=1e-6)
        assert als_objective(W, H, Y, np.ones(Y.shape, bool), None, None, 1.0) < 1e-10

    def test_mu_zero_returns_zeros(self, rng):
        Y, mask, Lr, Lc = random_problem(rng)
        W, H = graph_reg_als(Y, mask, Lr, Lc, mu=0.0, rank=2)
        assert W.shape == (8, 2) and H.shape == (9, 2)
        assert not W.any() and not H.any()

    def test_rank_validated(self, rng):
        Y, mask, Lr, Lc = random_problem(rng)
        with pytest.raises(ValueError):
            graph_reg_als(Y, mask, Lr, Lc, mu=1.0, rank=0)

    def test_cg_failure_warns_once(self, rng):
        Y, mask, Lr, Lc = random_problem(rng)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            graph_reg_als(Y, mask, Lr, Lc, mu=1.0, rank=3, sweeps=5, cg_iters=1, tol=0)
        assert len([w for w in caught if issubclass(w.category, RuntimeWarning)]) == 1


def test_mean_predictor():
    Y = np.array([[1.0, 5.0], [3.0, 100.0]])
    mask = np.array([[True, False], [True, False]])
    assert mean_predictor(Y, mask) == 2.0


def test_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(rank=0)
    with pytest.raises(ValueError):
        BaselineConfig(step=0)


def test_select_mu_uses_only_the_fit_mask(rng):
    Y = rng.standard_normal((6, 7))
    mask = rng.random((6, 7)) < 0.6
    seen = []

    def solve(fit, mu):
        seen.append(fit.copy())
        return np.where(fit, Y, 0.0) + (mu == 2.0) * np.where(fit, 0.0, Y)

    best, scores = select_mu(solve, Y, mask, [1.0, 2.0, 3.0], holdout=0.3, seed=1)
    assert best == 2.0 and scores[2.0] == 0.0
    assert all(not np.any(f & ~mask) and f.sum() < mask.sum() for f in seen)
