import numpy as np
import pytest

import oracles
from conftest import random_spd
from matgpca import simulation
from matgpca.errors import ConfigError, DimensionError, RankError
from matgpca.simulation import (
    DgpConfig, align_rotation, asymptotic_variance_R, gen_cov, gen_series, mse_common,
    normality_experiment, run_monte_carlo, setting_config,
)


class TestGenCov:
    def test_case1(self):
        S = gen_cov("case1", 4)
        assert np.all(np.diag(S) == 1.0)
        assert np.all(S[~np.eye(4, dtype=bool)] == 0.25)

    def test_case2(self):
        S = gen_cov("case2", 20)
        assert S[0, 1] == pytest.approx(0.4) and S[3, 2] == pytest.approx(0.4)
        assert S[0, 5] == 0.0 and S[2, 19] == 0.0
        assert np.linalg.eigvalsh(S)[0] > 0

    def test_case3(self):
        S = gen_cov("case3", 10, seed=1)
        assert set(np.round(np.diag(S), 10)) <= {1.0, 1.1, 1.2, 1.3, 1.4}
        assert S[0, 1] == 1.0 and S[0, 2] == 0.0
        np.testing.assert_array_equal(S, S.T)
        with pytest.raises(ConfigError):
            gen_cov("case3", 12)
        with pytest.raises(ConfigError):
            DgpConfig(p1=12, p2=10, cov_case="case3")

    def test_config_validation(self):
        for kw in [dict(phi=1.0), dict(psi=-1.2), dict(k1=30), dict(T=0), dict(mixing="cube")]:
            with pytest.raises(ConfigError):
                DgpConfig(**kw)
        with pytest.raises(ConfigError):
            DgpConfig(cov_case="custom")


class TestGenSeries:
    def test_deterministic_and_reconstructs(self):
        cfg = DgpConfig(T=30, p1=8, p2=9, cov_case="case2", seed=42)
        X1, t1 = gen_series(cfg)
        X2, _ = gen_series(cfg)
        assert X1.tobytes() == X2.tobytes()
        np.testing.assert_allclose(X1, t1.common + t1.noise, atol=0)
        X3, _ = gen_series(cfg, seed=43)
        assert not np.array_equal(X1, X3)

    def test_factor_moments(self):
        cfg = DgpConfig(T=10000, p1=3, p2=3, k1=2, k2=2, phi=0.0, psi=0.0, seed=1)
        _, t = gen_series(cfg)
        f = t.factors.reshape(cfg.T, -1)
        v = f.var(axis=0)
        assert np.all((v >= 0.95) & (v <= 1.05))

    def test_factor_autocorrelation(self):
        cfg = DgpConfig(T=10000, p1=3, p2=3, k1=2, k2=2, phi=0.1, seed=2)
        _, t = gen_series(cfg)
        f = t.factors.reshape(cfg.T, -1)
        f = f - f.mean(axis=0)
        rho = np.sum(f[1:] * f[:-1], axis=0) / np.sum(f * f, axis=0)
        assert np.all((rho >= 0.07) & (rho <= 0.13))

    @pytest.mark.parametrize("mixing", ["sqrt", "linear"])
    def test_noise_covariance_structure(self, rng, mixing):
        U, V = random_spd(rng, 4, 3.0), random_spd(rng, 4, 3.0)
        cfg = DgpConfig(T=20000, p1=4, p2=4, k1=1, k2=1, psi=0.0, cov_case="custom", U=U, V=V,
                        mixing=mixing, seed=3)
        _, t = gen_series(cfg)
        vec = t.noise.transpose(0, 2, 1).reshape(cfg.T, 16)  # column stacking
        S = vec.T @ vec / cfg.T
        np.testing.assert_allclose(S, t.cov.kron(), atol=0.05 * max(1.0, np.abs(t.cov.kron()).max()))
        if mixing == "sqrt":
            np.testing.assert_allclose(t.cov.kron(), np.kron(V, U), atol=1e-12)

    def test_normality_mode_loadings(self):
        cfg = DgpConfig(T=20, p1=20, p2=30, normality_mode=True, cov_case="case2", seed=5)
        _, t = gen_series(cfg)
        Ui = np.linalg.inv(t.cov.U)
        np.testing.assert_allclose(t.R.T @ Ui @ t.R / 20, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(t.factor_variances, [1.5, 1, 0.5] * 3)


class TestMetrics:
    def test_mse(self, rng):
        S = rng.standard_normal((3, 4, 5))
        assert mse_common(S, S) == 0.0
        assert mse_common(S + 1.0, S) == pytest.approx(1.0)
        A = rng.standard_normal((3, 4, 5))
        assert mse_common(A, S) == pytest.approx(oracles.mse(A, S), abs=1e-12)
        with pytest.raises(DimensionError):
            mse_common(A, S[:2])

    def test_align_rotation(self, rng):
        L = rng.standard_normal((10, 3))
        np.testing.assert_allclose(align_rotation(L, L), np.eye(3), atol=1e-12)
        O, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        np.testing.assert_allclose(align_rotation(L @ O, L), O, atol=1e-10)
        est = L @ O + 0.1 * rng.standard_normal((10, 3))
        H = align_rotation(est, L)
        best = np.linalg.norm(est - L @ H)
        for _ in range(100):
            G, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            assert best <= np.linalg.norm(est - L @ G) + 1e-12
        with pytest.raises(RankError):
            align_rotation(est, np.ones((10, 3)))


class TestMonteCarlo:
    def test_noiseless(self):
        cfg = DgpConfig(T=20, p1=8, p2=10, noise_scale=0.0, cov_case="case2", seed=1)
        t = run_monte_carlo(cfg, ["gpca", "oracle", "alpha_pca", "pe"], 1)
        for r in t.rows:
            if r.metric != "MSE":
                assert r.mean <= 1e-8
            assert r.n_effective == 1

    def test_csv_and_text(self):
        t = run_monte_carlo(DgpConfig(T=15, p1=6, p2=7, seed=2), ["pe", "alpha_pca"], 3)
        lines = t.to_csv().splitlines()
        assert lines[0] == "case,setting,T,p1,p2,method,metric,mean,sd,n_effective"
        assert len(lines) == 1 + 2 * 3
        assert all(0.0 <= r.mean <= 1.0 for r in t.rows if r.metric != "MSE")
        assert "alpha_pca" in t.to_text()

    def test_failures_recorded(self, monkeypatch):
        real = simulation.fit_method

        def flaky(method, X, *a, **k):
            if method == "pe" and X[0, 0, 0] > 0:
                raise RuntimeError("boom")
            return real(method, X, *a, **k)

        monkeypatch.setattr(simulation, "fit_method", flaky)
        t = run_monte_carlo(DgpConfig(T=10, p1=5, p2=6, seed=0), ["pe", "alpha_pca"], 8)
        pe = t.get("pe", "D_R")
        assert t.failures["pe"] > 0
        assert pe.n_effective + t.failures["pe"] == 8
        assert t.get("alpha_pca", "D_R").n_effective == 8

    def test_threads_do_not_change_output(self):
        cfg = DgpConfig(T=15, p1=6, p2=7, seed=4)
        a = run_monte_carlo(cfg, ["pe", "gpca"], 4, threads=1).to_csv()
        b = run_monte_carlo(cfg, ["pe", "gpca"], 4, threads=2).to_csv()
        assert a == b

    def test_setting_config(self):
        a = setting_config("A", 50)
        b = setting_config("B", 50)
        assert (a.p1, a.p2) == (20, 50) and (b.p1, b.p2) == (50, 20)


class TestNormality:
    def test_closed_form_variance(self):
        cfg = DgpConfig(T=10, p1=6, p2=30, normality_mode=True, cov_case="custom",
                        U=gen_cov("case2", 6), V=np.eye(30), mixing="sqrt", seed=1)
        _, t = gen_series(cfg)
        np.testing.assert_allclose(t.C.T @ t.C, 30 * np.eye(3), atol=1e-10)
        est, se = asymptotic_variance_R(t, 2, n_mc=20000, seed=0, return_se=True)
        exact = t.cov.U[2, 2] * np.diag(1.0 / np.array([4.5, 3.0, 1.5]))
        assert np.all(np.abs(est - exact) <= 3 * se + 1e-12)

    def test_linearity_and_mc_rate(self):
        cfg = DgpConfig(T=10, p1=6, p2=30, normality_mode=True, cov_case="case2", seed=1)
        _, t = gen_series(cfg)
        a = asymptotic_variance_R(t, 0, n_mc=4000, seed=3)
        t.cov.U[0, 0] *= 2
        b = asymptotic_variance_R(t, 0, n_mc=4000, seed=3)
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12)
        _, se1 = asymptotic_variance_R(t, 0, n_mc=20000, seed=5, return_se=True)
        _, se2 = asymptotic_variance_R(t, 0, n_mc=40000, seed=5, return_se=True)
        assert se2[0, 0] / se1[0, 0] == pytest.approx(1 / np.sqrt(2), rel=0.1)

    def test_requires_normality_mode(self):
        _, t = gen_series(DgpConfig(T=10, p1=6, p2=7))
        with pytest.raises(ConfigError):
            asymptotic_variance_R(t)

    def test_zero_noise(self):
        cfg = DgpConfig(T=30, p1=10, p2=30, normality_mode=True, noise_scale=0.0, seed=2)
        out = normality_experiment(cfg, ["gpca", "pe"], n_reps=3, n_mc=2000)
        for r in out.values():
            assert np.max(np.abs(r.values)) < 1e-6
            counts, edges = r.histogram(bins=10)
            assert counts.sum() == 3 and len(edges) == 11
