import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sparsecl.simulate import (
    TABLE1_LAMBDAS,
    CholeskyFailure,
    SimulationSetting,
    equicorrelation,
    gen_setting1,
    gen_setting2,
    gen_setting3,
    mvn_sample,
    replicate_rng,
    run_experiment,
    run_replicate,
)


class TestSampler:
    def test_moments(self):
        n = 5000
        y = mvn_sample(np.zeros(3), np.eye(3), n, np.random.default_rng(0))
        assert np.all(np.abs(y.mean(axis=0)) < 4 / math.sqrt(n))
        assert np.all(np.abs(y.var(axis=0) - 1) < 4 * math.sqrt(2 / n))

    def test_replay(self):
        a = mvn_sample(np.zeros(2), np.eye(2), 1, np.random.default_rng(9))
        b = mvn_sample(np.zeros(2), np.eye(2), 1, np.random.default_rng(9))
        assert_array_equal(a, b)

    def test_equicorrelation(self):
        y = mvn_sample(np.zeros(100), equicorrelation(100, 0.5), 2000, np.random.default_rng(1))
        r = np.corrcoef(y, rowvar=False)[np.triu_indices(100, 1)]
        assert np.all(np.abs(r - 0.5) < 0.1)

    def test_not_spd(self):
        with pytest.raises(CholeskyFailure):
            mvn_sample(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), 3, np.random.default_rng(0))

    @pytest.mark.parametrize("cfg", [
        SimulationSetting(sigma_offdiag=0.0), SimulationSetting(sigma_offdiag=0.5),
        SimulationSetting(kind="correlation"),
        SimulationSetting(kind="correlation", correlation_pattern="toeplitz",
                          support=tuple(itertools.combinations(range(5), 2))),
    ])
    def test_cholesky_reconstruction(self, cfg):
        S = cfg.covariance()
        L = np.linalg.cholesky(S)
        assert np.max(np.abs(L @ L.T - S)) <= 1e-10


class TestSettings:
    def test_setting1(self):
        cfg = SimulationSetting()
        y, theta = gen_setting1(cfg, replicate_rng(cfg.seed, 0))
        assert y.shape == (250, 100)
        assert np.count_nonzero(theta) == 25 and theta.sum() == 75.0
        assert_array_equal(theta[:5], 5.0)

    def test_setting2(self):
        cfg = SimulationSetting(kind="probit")
        y, x, theta = gen_setting2(cfg, replicate_rng(cfg.seed, 0))
        assert set(np.unique(y)) <= {0.0, 1.0}
        assert x.shape == (250,)
        assert_array_equal(np.unique(theta[:25]), [0.5, 0.75, 1.0, 1.25, 1.5])

    def test_setting2_mean(self):
        # P(Y_j = 1) = Phi(0.1 + theta_j x); averaged over x ~ N(0, 1) this is Phi(0.1 / sqrt(1 + theta^2))
        from scipy.stats import norm

        cfg = SimulationSetting(kind="probit", n=20000)
        y, _, theta = gen_setting2(cfg, replicate_rng(1, 0))
        expected = norm.cdf(0.1 / np.sqrt(1 + theta**2))
        assert np.all(np.abs(y.mean(axis=0) - expected) < 4 * 0.5 / math.sqrt(cfg.n))

    def test_setting3_uniform(self):
        cfg = SimulationSetting(kind="correlation")
        y, theta = gen_setting3(cfg, replicate_rng(cfg.seed, 0))
        assert y.shape == (250, 15) and theta.size == 105
        assert np.count_nonzero(theta) == 10 and np.all(theta[theta != 0] == 0.5)
        assert np.linalg.eigvalsh(cfg.covariance()).min() > 0

    def test_setting3_toeplitz_band_rejected(self):
        cfg = SimulationSetting(kind="correlation", correlation_pattern="toeplitz")
        with pytest.raises(CholeskyFailure, match="different support"):
            gen_setting3(cfg, replicate_rng(cfg.seed, 0))

    def test_setting3_toeplitz_values(self):
        sup = tuple(itertools.combinations(range(5), 2))
        cfg = SimulationSetting(kind="correlation", correlation_pattern="toeplitz", support=sup)
        R = cfg.covariance()
        for a, b in sup:
            assert_allclose(R[a, b], math.exp(-0.1 * abs(a - b)))

    def test_all_zero(self):
        assert np.all(SimulationSetting(theta_active=()).theta_true() == 0)
        assert np.all(SimulationSetting(kind="correlation", theta_active=()).theta_true() == 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            SimulationSetting(kind="poisson")
        with pytest.raises(ValueError):
            SimulationSetting(replicates=0)
        with pytest.raises(ValueError):
            SimulationSetting(p=10).theta_true()


class TestExperiment:
    def test_replicate_is_reproducible(self):
        cfg = SimulationSetting(replicates=2)
        a = run_replicate(cfg, TABLE1_LAMBDAS, 1)
        b = run_replicate(cfg, TABLE1_LAMBDAS, 1)
        assert_array_equal(a.theta_hat, b.theta_hat)
        assert_array_equal(a.kkt_residual, b.kkt_residual)

    def test_workers_do_not_change_results(self):
        cfg = SimulationSetting(kind="probit", replicates=6)
        a = run_experiment(cfg, [1.0, 10.0], workers=1).table()
        b = run_experiment(cfg, [1.0, 10.0], workers=3).table()
        assert a == b

    def test_table_fields(self):
        res = run_experiment(SimulationSetting(replicates=5), [0.75, 100.0])
        rows = res.table()
        assert [r["lambda"] for r in rows] == [0.75, 100.0]
        for r in rows:
            assert 0 <= r["tpp"] <= 100 and 0 <= r["fdp"] <= 100
            assert r["max_kkt_residual"] <= 1e-7 and r["nonconverged"] == 0
            assert r["relative_efficiency"] > 0

    def test_correlation_experiment(self):
        rows = run_experiment(SimulationSetting(kind="correlation", replicates=5), [1.0, 7.0]).table()
        assert rows[0]["p_hat"] >= rows[1]["p_hat"]
