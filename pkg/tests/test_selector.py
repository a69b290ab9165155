import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import chi2

from sparsecl.covariance import ScoreCovariance, ScoreMatrix, build_score_matrix, empirical_covariance
from sparsecl.estimation import PrelimEstimate, solve_all
from sparsecl.score_models import GaussianLocationModel
from sparsecl.selector import (
    MaxSweepsWarning,
    PenaltyWeights,
    SingularActiveBlockError,
    closed_form_active,
    closed_form_identity,
    coordinate_descent,
    exhaustive_minimizer,
    kkt_check,
    lambda_for_target,
    lambda_max,
    lambda_path,
    objective,
    objective_gradient,
    population_rule,
    soft_threshold,
    z_statistics,
)
from sparsecl.simulate import TABLE1_LAMBDAS, SimulationSetting, generate, replicate_rng


def _prelim(theta):
    theta = np.asarray(theta, float)
    return PrelimEstimate(theta, np.ones(theta.size, bool), np.zeros(theta.size, int),
                          ["ok"] * theta.size)


def _location_problem(seed, n=60, p=6, rho=0.3, shift=0.3):
    rng = np.random.default_rng(seed)
    S = rho * np.ones((p, p)) + (1 - rho) * np.eye(p)
    theta = shift * rng.standard_normal(p)
    y = theta + rng.standard_normal((n, p)) @ np.linalg.cholesky(S).T
    m = GaussianLocationModel(p)
    prelim = solve_all(m, y)
    scores = build_score_matrix(m, y, prelim)
    return prelim, scores, empirical_covariance(scores)


class TestObjective:
    def test_zero(self):
        cov = ScoreCovariance(np.eye(3), 10)
        assert objective(np.zeros(3), cov, PenaltyWeights(np.ones(3)), 5.0) == 0.0

    def test_identity_minimum(self):
        cov = ScoreCovariance(np.eye(4), 10)
        wts = PenaltyWeights(np.ones(4))
        assert objective(np.ones(4), cov, wts, 0.0) == -2.0
        rule = coordinate_descent(cov, wts, 0.0)
        assert_allclose(rule.w_hat, 1.0)
        assert_allclose(rule.objective_value, -2.0)

    @given(st.floats(0.1, 5), st.floats(0.01, 4), st.floats(0, 50), st.integers(1, 100))
    def test_scalar_soft_threshold(self, c, t, lam, n):
        cov = ScoreCovariance(np.array([[c]]), n)
        wts = PenaltyWeights.from_theta([math.sqrt(t)])
        rule = coordinate_descent(cov, wts, lam)
        expected = soft_threshold(c, lam / (n * t)) / c
        assert_allclose(rule.w_hat[0], expected, rtol=1e-12, atol=1e-15)
        # zero exactly when n C theta^2 <= lam, ties included
        assert (rule.w_hat[0] == 0) == (c <= wts.thresholds(lam, n)[0])

    def test_infinite_weight(self):
        cov = ScoreCovariance(np.eye(2), 10)
        wts = PenaltyWeights.from_theta([0.0, 1.0])
        assert objective([1.0, 0.0], cov, wts, 1.0) == np.inf
        assert objective([0.0, 1.0], cov, wts, 1.0) == pytest.approx(-0.5 + 0.1)

    @given(st.integers(0, 2**32 - 1))
    def test_gradient_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((10, 5))
        cov = ScoreCovariance(A.T @ A / 10, 10)
        w = rng.standard_normal(5)
        h = 1e-5
        fd = np.array([(objective(w + h * e, cov, PenaltyWeights(np.zeros(5)), 0.0)
                        - objective(w - h * e, cov, PenaltyWeights(np.zeros(5)), 0.0)) / (2 * h)
                       for e in np.eye(5)])
        assert_allclose(objective_gradient(w, cov), fd, rtol=1e-6, atol=1e-8)


def test_soft_threshold():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


class TestCoordinateDescent:
    def test_diagonal_lambda_zero(self):
        cov = ScoreCovariance(np.diag([0.5, 2.0, 3.0]), 20)
        assert_array_equal(coordinate_descent(cov, PenaltyWeights(np.ones(3)), 0.0).w_hat, 1.0)

    def test_matches_identity_closed_form(self):
        cfg = SimulationSetting(n=250)
        model, data, _ = generate(cfg, replicate_rng(cfg.seed, 0))
        prelim = solve_all(model, data)
        cov = empirical_covariance(build_score_matrix(model, data, prelim))
        dcov = ScoreCovariance(np.diag(cov.h_hat), cov.n)
        for lam in TABLE1_LAMBDAS:
            cd = coordinate_descent(dcov, PenaltyWeights.from_prelim(prelim), lam)
            cf = closed_form_identity(cov, prelim, lam)
            assert_allclose(cd.w_hat, cf.w_hat, rtol=0, atol=1e-8)

    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 20.0))
    def test_objective_decreases_each_sweep(self, seed, lam):
        prelim, _, cov = _location_problem(seed)
        rule = coordinate_descent(cov, PenaltyWeights.from_prelim(prelim), lam, record_objective=True)
        trace = np.asarray(rule.objective_trace)
        assert np.all(np.diff(trace) <= 1e-12 * (1 + np.abs(trace[:-1])))
        assert rule.converged and rule.kkt_residual <= 1e-7

    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 20.0))
    def test_matches_exhaustive_search(self, seed, lam):
        prelim, _, cov = _location_problem(seed, p=5)
        wts = PenaltyWeights.from_prelim(prelim)
        rule = coordinate_descent(cov, wts, lam)
        w_ex, f_ex = exhaustive_minimizer(cov, wts, lam)
        assert rule.objective_value - f_ex <= 1e-6
        assert_array_equal(rule.w_hat != 0, w_ex != 0)

    def test_zero_theta_forces_zero_weight(self):
        cov = ScoreCovariance(np.array([[1.0, 0.3], [0.3, 1.0]]), 10)
        rule = coordinate_descent(cov, PenaltyWeights.from_theta([0.0, 0.5]), 0.0)
        assert rule.w_hat[0] == 0.0 and rule.w_hat[1] == 1.0

    def test_zero_score_column(self):
        cov = ScoreCovariance(np.diag([0.0, 1.0]), 10)
        with pytest.warns(RuntimeWarning, match="zero score"):
            rule = coordinate_descent(cov, PenaltyWeights(np.ones(2)), 0.0)
        assert_array_equal(rule.w_hat, [0.0, 1.0])

    def test_max_sweeps(self):
        C = 0.95 * np.ones((6, 6)) + 0.05 * np.eye(6)
        with pytest.warns(MaxSweepsWarning):
            rule = coordinate_descent(ScoreCovariance(C, 50), PenaltyWeights(np.ones(6)), 0.0,
                                      max_sweeps=2)
        assert not rule.converged and rule.sweeps == 2

    def test_accepts_score_matrix(self, rng):
        u = rng.standard_normal((30, 3))
        a = coordinate_descent(ScoreMatrix(u), PenaltyWeights(np.ones(3)), 1.0).w_hat
        b = coordinate_descent(empirical_covariance(ScoreMatrix(u)), PenaltyWeights(np.ones(3)),
                               1.0).w_hat
        assert_array_equal(a, b)

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            coordinate_descent(ScoreCovariance(np.eye(1), 1), PenaltyWeights(np.ones(1)), -1.0)


class TestKKT:
    def test_scalar_exact(self):
        cov = ScoreCovariance(np.array([[2.0]]), 10)
        wts = PenaltyWeights(np.array([4.0]))
        lam = 3.0
        w = soft_threshold(2.0, lam * 4.0 / 10) / 2.0
        res, ok = kkt_check([w], cov, wts, lam)
        assert res <= 1e-10 and ok

    def test_zero_optimal_for_huge_lambda(self, rng):
        prelim, _, cov = _location_problem(1)
        res, ok = kkt_check(np.zeros(cov.p), cov, PenaltyWeights.from_prelim(prelim), 1e12)
        assert ok and res == 0.0

    def test_perturbation_detected(self):
        prelim, _, cov = _location_problem(2)
        wts = PenaltyWeights.from_prelim(prelim)
        rule = coordinate_descent(cov, wts, 2.0)
        assert kkt_check(rule.w_hat, cov, wts, 2.0)[1]
        w = rule.w_hat.copy()
        w[rule.active_set[0]] += 0.1
        assert not kkt_check(w, cov, wts, 2.0)[1]


class TestClosedFormActive:
    def test_identity(self):
        cov = ScoreCovariance(np.eye(3), 5)
        assert_allclose(closed_form_active(cov, PenaltyWeights(np.ones(3)), 0.0, [0, 1, 2],
                                           [1, 1, 1]), 1.0)

    def test_two_by_two(self):
        cov = ScoreCovariance(np.array([[1.0, 0.5], [0.5, 1.0]]), 5)
        w = closed_form_active(cov, PenaltyWeights(np.ones(2)), 0.0, [0, 1], [1, 1])
        assert_allclose(w, [2 / 3, 2 / 3], rtol=1e-14)

    @pytest.mark.parametrize("lam", [0.5, 3.0, 10.0])
    def test_agrees_with_descent(self, lam):
        prelim, _, cov = _location_problem(5, n=80, p=8)
        wts = PenaltyWeights.from_prelim(prelim)
        rule = coordinate_descent(cov, wts, lam)
        A = rule.active_set
        w = closed_form_active(cov, wts, lam, A, np.sign(rule.w_hat[A]))
        assert_allclose(w, rule.w_hat, atol=1e-8)

    def test_singular(self):
        cov = ScoreCovariance(np.ones((2, 2)), 5)
        with pytest.raises(SingularActiveBlockError):
            closed_form_active(cov, PenaltyWeights(np.ones(2)), 0.0, [0, 1], [1, 1])
        w = closed_form_active(cov, PenaltyWeights(np.ones(2)), 0.0, [0, 1], [1, 1], ridge=1.0)
        assert_allclose(w, [1 / 3, 1 / 3])

    def test_empty(self):
        cov = ScoreCovariance(np.eye(2), 5)
        assert_array_equal(closed_form_active(cov, PenaltyWeights(np.ones(2)), 1.0, [], []), 0.0)


class TestClosedFormIdentity:
    def _cov(self, stat, h=1.0):
        # n theta^2 / C_jj = stat with theta = 1 and n = stat * h
        return ScoreCovariance(np.array([[h]]), stat * h), _prelim([1.0])

    def test_examples(self):
        cov, prelim = self._cov(10)
        assert_allclose(closed_form_identity(cov, prelim, 4.0).w_hat, [0.6])
        cov, prelim = self._cov(3)
        assert_array_equal(closed_form_identity(cov, prelim, 4.0).w_hat, [0.0])

    def test_lambda_zero(self):
        cov = ScoreCovariance(np.diag([0.5, 2.0, 1.0]), 10)
        w = closed_form_identity(cov, _prelim([0.3, -2.0, 0.0]), 0.0).w_hat
        assert_array_equal(w, [1.0, 1.0, 0.0])

    @given(st.floats(0.2, 5.0), st.floats(0.05, 3.0), st.floats(0.0, 40.0))
    def test_is_minimiser_for_any_diagonal(self, h, t, lam):
        # the scalar criterion 1/2 h w^2 - h w + lam |w| / (n t^2) has the
        # minimiser 1 - lam / (n t^2 h) whenever that is positive
        n = 50
        cov = ScoreCovariance(np.array([[h]]), n)
        w = closed_form_identity(cov, _prelim([t]), lam).w_hat[0]
        expected = max(1.0 - lam / (n * t * t * h), 0.0)
        assert_allclose(w, expected, rtol=1e-12, atol=1e-15)
        cd = coordinate_descent(cov, PenaltyWeights.from_theta([t]), lam).w_hat[0]
        assert_allclose(w, cd, rtol=1e-12, atol=1e-15)


class TestZStatistics:
    def test_empty_rule(self, rng):
        u = rng.standard_normal((20, 3))
        prelim = _prelim([0.5, -1.0, 0.0])
        z = z_statistics(ScoreMatrix(u), prelim, np.zeros(3))
        expected = np.array([0.25, 1.0, 0.0]) * np.sum(u * u, axis=0)
        assert_allclose(z, expected, rtol=1e-14)
        assert z[2] == 0.0

    def test_null_quantile(self):
        cfg = SimulationSetting(theta_active=(), replicates=200)
        stats = []
        for r in range(cfg.replicates):
            model, data, _ = generate(cfg, replicate_rng(cfg.seed, r))
            prelim = solve_all(model, data)
            stats.append(z_statistics(build_score_matrix(model, data, prelim), prelim,
                                      np.zeros(model.p)))
        q = np.quantile(np.concatenate(stats), 0.95)
        assert abs(q - chi2.isf(0.05, 1)) <= 0.4


class TestPath:
    def test_lambda_zero_is_full_model(self):
        prelim, _, cov = _location_problem(3)
        entry = lambda_path(cov, prelim, [0.0])[0]
        assert_array_equal(entry.theta_hat[entry.rule.w_hat != 0],
                           prelim.theta_tilde[entry.rule.w_hat != 0])
        assert entry.p_hat == cov.p

    def test_huge_lambda_is_empty(self):
        prelim, _, cov = _location_problem(3)
        entry = lambda_path(cov, prelim, [1e12])[0]
        assert entry.p_hat == 0 and np.all(entry.theta_hat == 0)

    def test_table_grid_sparsity(self):
        cfg = SimulationSetting(replicates=20)
        p_hat = []
        for r in range(cfg.replicates):
            model, data, _ = generate(cfg, replicate_rng(cfg.seed, r))
            prelim = solve_all(model, data)
            cov = empirical_covariance(build_score_matrix(model, data, prelim))
            p_hat.append(lambda_path(cov, prelim, TABLE1_LAMBDAS).p_hats)
        p_hat = np.mean(p_hat, axis=0)
        assert abs(p_hat[0] - 52.157) < 3 and abs(p_hat[-1] - 24.846) < 1.5

    @given(st.integers(0, 2**32 - 1))
    def test_warm_equals_cold(self, seed):
        prelim, _, cov = _location_problem(seed, p=10, n=100)
        grid = np.geomspace(0.1, 50, 8)
        warm = lambda_path(cov, prelim, grid)
        cold = lambda_path(cov, prelim, grid, warm_start=False)
        down = lambda_path(cov, prelim, grid, order="decreasing")
        for a, b, c in zip(warm, cold, down):
            assert_allclose(a.rule.w_hat, b.rule.w_hat, atol=1e-8)
            assert_allclose(c.rule.w_hat, b.rule.w_hat, atol=1e-8)
            assert_array_equal(a.theta_hat != 0, a.rule.w_hat != 0)

    def test_grid_validation(self):
        prelim, _, cov = _location_problem(3)
        for grid in ([], [1.0, 1.0], [2.0, 1.0], [-1.0, 1.0]):
            with pytest.raises(ValueError):
                lambda_path(cov, prelim, grid)
        with pytest.raises(ValueError):
            lambda_path(cov, prelim, [1.0], order="sideways")

    def test_lambda_max(self):
        prelim, _, cov = _location_problem(4)
        top = lambda_max(cov, prelim)
        assert coordinate_descent(cov, PenaltyWeights.from_prelim(prelim), top).p_hat == 0
        assert coordinate_descent(cov, PenaltyWeights.from_prelim(prelim), 0.99 * top).p_hat > 0

    @pytest.mark.parametrize("target", [0, 1, 3, 5])
    def test_target_sparsity(self, target):
        prelim, _, cov = _location_problem(6, p=8, n=100)
        entry = lambda_for_target(cov, prelim, target)
        assert entry.p_hat <= target
        if 0 < entry.lam:
            below = coordinate_descent(cov, PenaltyWeights.from_prelim(prelim), entry.lam * (1 - 1e-6))
            assert below.p_hat >= entry.p_hat

    def test_target_negative(self):
        prelim, _, cov = _location_problem(6)
        with pytest.raises(ValueError):
            lambda_for_target(cov, prelim, -1)


class TestPopulationRule:
    def test_lambda_zero(self):
        C = np.array([[1.0, 0.5, 0.0], [0.5, 2.0, 0.3], [0.0, 0.3, 1.0]])
        w = population_rule(C, [1.0, 0.0, 2.0], 0.0).w_hat
        assert_allclose(w, np.linalg.solve(C, np.diag(C)), atol=1e-8)

    def test_null_components_dropped(self):
        C = np.array([[1.0, 0.5], [0.5, 1.0]])
        w = population_rule(C, [2.0, 0.0], 0.01).w_hat
        assert w[1] == 0.0
        assert_allclose(w[0], 1.0 - 0.01 / 4.0)
