import warnings

import numpy as np
import pytest

import oracles
from conftest import random_spd
from matgpca.errors import DimensionError, RankError
from matgpca.estimators import (
    EigengapWarning, SeparableCovariance, alpha_pca, alpha_pca_init, closed_form_factor,
    common_components, oracle_gpca, pe_estimate,
)
from matgpca.linalg import spd_inv_sqrt, spd_sqrt, subspace_distance
from matgpca.simulation import run_monte_carlo, setting_config


def low_rank(rng, T, p1, p2, k1, k2, U=None, V=None, noise=0.0):
    R = rng.uniform(-1, 1, (p1, k1))
    C = rng.uniform(-1, 1, (p2, k2))
    F = rng.standard_normal((T, k1, k2))
    X = R @ F @ C.T
    if noise:
        G = rng.standard_normal((T, p1, p2))
        if U is not None:
            G = spd_sqrt(U) @ G @ spd_sqrt(V)
        X = X + noise * G
    return X, R, C, F


class TestAlphaPcaInit:
    def test_noiseless_span(self, rng):
        X, R, C, _ = low_rank(rng, 30, 8, 6, 2, 2)
        R0, C0 = alpha_pca_init(X, 2, 2)
        assert subspace_distance(R0, R) < 1e-10
        assert subspace_distance(C0, C) < 1e-10
        np.testing.assert_allclose(R0.T @ R0 / 8, np.eye(2), atol=1e-12)

    def test_rank_one(self):
        X = np.zeros((5, 3, 3))
        X[:, 0, 0] = 1.0
        R0, C0 = alpha_pca_init(X, 1, 1)
        np.testing.assert_allclose(R0[:, 0], [np.sqrt(3), 0, 0], atol=1e-14)
        np.testing.assert_allclose(C0[:, 0], [np.sqrt(3), 0, 0], atol=1e-14)

    def test_bad_k(self, rng):
        with pytest.raises(DimensionError):
            alpha_pca_init(rng.standard_normal((4, 3, 3)), 4, 1)

    def test_degenerate_gap_warns(self):
        X = np.broadcast_to(np.eye(3), (4, 3, 3)).copy()
        with pytest.warns(EigengapWarning):
            alpha_pca_init(X, 1, 1)

    def test_alpha_pca_case1_small_sample(self):
        # reference value 0.2603 for the init on Case-1 data, T = p2 = 20
        t = run_monte_carlo(setting_config("A", 20, "case1"), ["alpha_pca"], 200)
        assert t.get("alpha_pca", "D_R").mean == pytest.approx(0.2603, abs=0.03)


class TestFactors:
    def test_identification_algebra(self, rng):
        p1, p2 = 6, 5
        U, V = random_spd(rng, p1), random_spd(rng, p2)
        R = spd_sqrt(U) @ (np.sqrt(p1) * np.linalg.qr(rng.standard_normal((p1, 2)))[0])
        C = spd_sqrt(V) @ (np.sqrt(p2) * np.linalg.qr(rng.standard_normal((p2, 2)))[0])
        F = rng.standard_normal((2, 2))
        cov = SeparableCovariance(U, V)
        np.testing.assert_allclose(closed_form_factor(R @ F @ C.T, R, C, cov), F, atol=1e-12)
        np.testing.assert_array_equal(closed_form_factor(np.zeros((p1, p2)), R, C, cov), 0.0)

    def test_matches_dense_formula(self, rng):
        p1, p2 = 6, 5
        U, V = random_spd(rng, p1), random_spd(rng, p2)
        R, C = rng.standard_normal((p1, 2)), rng.standard_normal((p2, 3))
        Xt = rng.standard_normal((p1, p2))
        got = closed_form_factor(Xt, R, C, SeparableCovariance(U, V))
        np.testing.assert_allclose(got, oracles.factor(Xt, R, C, U, V), atol=1e-12)

    def test_common_components(self, rng):
        R = np.array([[1.0], [0.0]])
        C = np.array([[1.0], [1.0]])
        S = common_components(R, np.array([[[2.0]]]), C)
        np.testing.assert_array_equal(S[0], [[2.0, 2.0], [0.0, 0.0]])
        R, C = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
        F = rng.standard_normal((5, 2, 2))
        np.testing.assert_allclose(common_components(R, F, C), oracles.common(R, F, C), atol=1e-12)
        with pytest.raises(DimensionError):
            common_components(R, F, rng.standard_normal((3, 1)))


class TestOracleGpca:
    def test_noiseless_recovery(self, rng):
        p1, p2 = 8, 7
        U, V = random_spd(rng, p1), random_spd(rng, p2)
        X, R, C, _ = low_rank(rng, 40, p1, p2, 2, 2)
        res = oracle_gpca(X, SeparableCovariance(U, V), 2, 2)
        assert subspace_distance(res.R_hat, R) <= 1e-8
        assert subspace_distance(res.C_hat, C) <= 1e-8
        np.testing.assert_allclose(res.common, X, atol=1e-10)
        Rs, Cs = res.whitened_loadings()
        assert subspace_distance(Rs, spd_inv_sqrt(U) @ R) <= 1e-8
        assert subspace_distance(Cs, spd_inv_sqrt(V) @ C) <= 1e-8
        assert res.converged

    def test_identity_equals_pe(self, rng):
        X, *_ = low_rank(rng, 30, 7, 6, 2, 1, noise=0.5)
        a = oracle_gpca(X, SeparableCovariance.identity(7, 6), 2, 1)
        b = pe_estimate(X, 2, 1)
        assert a.R_hat.tobytes() == b.R_hat.tobytes()
        assert a.C_hat.tobytes() == b.C_hat.tobytes()

    def test_identification_and_result_invariants(self, rng):
        p1, p2 = 9, 8
        U, V = random_spd(rng, p1), random_spd(rng, p2)
        X, *_ = low_rank(rng, 50, p1, p2, 2, 3, U, V, noise=0.7)
        res = oracle_gpca(X, SeparableCovariance(U, V), 2, 3)
        np.testing.assert_allclose(res.Q_R.T @ res.Q_R, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(res.Q_C.T @ res.Q_C, np.eye(3), atol=1e-12)
        Ui = np.linalg.inv(U)
        np.testing.assert_allclose(res.R_hat.T @ Ui @ res.R_hat / p1, np.eye(2), atol=1e-10)
        np.testing.assert_allclose(res.common, common_components(res.R_hat, res.factors, res.C_hat), atol=1e-12)
        np.testing.assert_allclose(res.common + res.residuals, X, atol=1e-12)

    def test_scale_equivariance(self, rng):
        p1, p2 = 8, 6
        U, V = random_spd(rng, p1), random_spd(rng, p2)
        X, *_ = low_rank(rng, 40, p1, p2, 2, 2, U, V, noise=0.5)
        a = oracle_gpca(X, SeparableCovariance(U, V), 2, 2)
        b = oracle_gpca(X, SeparableCovariance(3.0 * U, V / 3.0), 2, 2)
        np.testing.assert_allclose(a.common, b.common, atol=1e-10)

    def test_objective_monotone(self, rng):
        p1, p2 = 10, 9
        U, V = random_spd(rng, p1), random_spd(rng, p2)
        X, *_ = low_rank(rng, 25, p1, p2, 2, 2, U, V, noise=2.0)
        res = oracle_gpca(X, SeparableCovariance(U, V), 2, 2, tol=1e-12, max_iter=50)
        path = np.array(res.objective_path)
        assert np.all(np.diff(path) <= 1e-10 * abs(path[0]))

    def test_rotation_invariance_of_common(self, rng):
        X, *_ = low_rank(rng, 30, 7, 6, 2, 2, noise=0.3)
        a = pe_estimate(X, 2, 2)
        G = np.array([[2.0, 1.0], [0.5, 1.5]])
        b = pe_estimate(X, 2, 2, init=(a.R_hat @ G, a.C_hat))
        np.testing.assert_allclose(a.common, b.common, atol=1e-8)

    def test_nonconvergence_flagged(self, rng):
        X, *_ = low_rank(rng, 10, 12, 11, 3, 3, noise=3.0)
        res = oracle_gpca(X, SeparableCovariance.identity(12, 11), 3, 3, max_iter=1, tol=1e-14)
        assert res.iterations == 1 and not res.converged
        assert res.final_step_distance > 0

    def test_rank_deficient_init(self, rng):
        X, *_ = low_rank(rng, 10, 5, 5, 2, 2)
        with pytest.raises(RankError):
            oracle_gpca(X, SeparableCovariance.identity(5, 5), 2, 2,
                        init=(np.ones((5, 2)), np.eye(5)[:, :2]))

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            oracle_gpca(rng.standard_normal((5, 4, 3)), SeparableCovariance.identity(3, 4), 1, 1)

    def test_alpha_pca_estimator(self, rng):
        X, R, C, _ = low_rank(rng, 30, 8, 6, 2, 2)
        res = alpha_pca(X, 2, 2)
        assert res.iterations == 0 and res.method == "alpha_pca"
        np.testing.assert_allclose(res.common, X, atol=1e-10)


def test_monte_carlo_reference_values():
    t = run_monte_carlo(setting_config("A", 200, "case2"), ["oracle", "pe"], 200)
    assert t.get("oracle", "D_R").mean == pytest.approx(0.0077, abs=0.002)
    assert t.get("pe", "MSE").mean == pytest.approx(0.0084, abs=0.003)


def test_pe_case1_t50():
    t = run_monte_carlo(setting_config("A", 50, "case1"), ["pe"], 200)
    assert t.get("pe", "D_R").mean == pytest.approx(0.0373, abs=0.005)
