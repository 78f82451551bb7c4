import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicitreg.aggregation import ModelCollection, gibbs_posterior
from implicitreg.explicit import (
    elastic_net_objective,
    kl_glm_solve,
    lambda_grid,
    lambda_path_solve,
    lasso_kkt_violation,
    lasso_solve,
    parse_grid,
    ridge_closed_form,
    ridge_glm_solve,
)
from implicitreg.glm_model import Design, GlmProblem, least_squares_problem
from implicitreg.optimizers import (
    StepSchedule,
    gd_run,
    ista_run,
    least_squares_objective,
    linear_objective,
    soft_threshold,
)

from _problems import random_glm, rng_for


class TestRidge:
    def test_identity_example(self):
        p = least_squares_problem(np.eye(2), [1.0, 1.0])
        sol = ridge_glm_solve(p, 0.25)
        np.testing.assert_allclose(sol.theta, [0.5, 0.5], atol=1e-14)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_closed_form(self, seed):
        rng = rng_for(50, seed)
        n, d = int(rng.integers(5, 60)), int(rng.integers(1, 25))
        x = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        lam = float(10 ** rng.uniform(-3, 2))
        sol = ridge_glm_solve(least_squares_problem(x, y), lam)
        assert sol.converged
        assert np.abs(sol.theta - ridge_closed_form(x, y, lam)).max() <= 1e-8

    def test_large_lambda_shrinks_to_anchor(self):
        rng = rng_for(51)
        p = random_glm(rng, "bernoulli")
        assert np.linalg.norm(ridge_glm_solve(p, 1e8).theta) < 1e-8
        anchor = np.ones(p.d)
        np.testing.assert_allclose(ridge_glm_solve(p, 1e8, anchor=anchor).theta, anchor, atol=1e-8)

    def test_symmetric_logistic_solution_is_zero(self):
        x = np.array([[1.0], [-1.0], [2.0], [-2.0]])
        y = np.array([1.0, 1.0, 0.0, 0.0])
        # sum_i x_i (y_i - 1/2) = 0, so theta = 0 is stationary
        sol = ridge_glm_solve(GlmProblem(Design(x), y, "bernoulli"), 0.1)
        assert abs(sol.theta[0]) < 1e-12

    @pytest.mark.parametrize("family", ["gaussian", "bernoulli", "poisson"])
    def test_unique_from_two_starts(self, family):
        rng = rng_for(52, len(family))
        p = random_glm(rng, family, 40, 5)
        a = ridge_glm_solve(p, 0.01).theta
        b = ridge_glm_solve(p, 0.01, theta_init=rng.uniform(-1, 1, 5)).theta
        np.testing.assert_allclose(a, b, atol=1e-7)

    @pytest.mark.parametrize("family", ["gaussian", "bernoulli", "poisson"])
    def test_stationarity(self, family):
        rng = rng_for(53, len(family))
        p = random_glm(rng, family, 40, 5)
        sol = ridge_glm_solve(p, 0.05)
        from implicitreg.glm_model import loss_gradient

        g = loss_gradient(p, sol.theta) + 0.1 * sol.theta
        assert np.linalg.norm(g) <= 1e-10

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            ridge_glm_solve(least_squares_problem(np.eye(2), [1.0, 1.0]), -1.0)

    def test_poisson_saturation_reported(self):
        x = np.array([[1.0], [2.0]])
        p = GlmProblem(Design(x), [1e20, 1e20], "poisson")
        sol = ridge_glm_solve(p, 1e-12, max_iter=100)
        assert sol.info["saturated"]


class TestKl:
    def test_constant_loss_returns_anchor(self):
        z = np.array([0.1, 0.2, 0.7])
        obj = linear_objective(np.full(3, 2.5))
        sol = kl_glm_solve(obj, 0.3, anchor=z)
        np.testing.assert_allclose(sol.theta, z, atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_linear_loss_is_gibbs(self, seed):
        rng = rng_for(54, seed)
        m = int(rng.integers(2, 30))
        c = rng.uniform(0, 3, m)
        z = rng.dirichlet(np.ones(m))
        lam = float(10 ** rng.uniform(-2, 1))
        sol = kl_glm_solve(linear_objective(c), lam, anchor=z)
        gibbs = gibbs_posterior(ModelCollection(c, prior=z), lam)
        assert np.abs(sol.theta - gibbs).max() <= 1e-8

    def test_large_lambda_returns_anchor(self):
        p = random_glm(rng_for(55), "gaussian", 20, 4)
        np.testing.assert_allclose(kl_glm_solve(p, 1e8).theta, np.full(4, 0.25), atol=1e-6)

    @pytest.mark.parametrize("lam", [1e-4, 1e-2, 1.0])
    def test_kkt_on_simplex(self, lam):
        p = random_glm(rng_for(56), "bernoulli", 30, 5)
        sol = kl_glm_solve(p, lam)
        assert sol.converged
        th = sol.theta
        assert th.sum() == pytest.approx(1.0, abs=1e-12)
        # grad + lam log(theta / z) is constant on the support
        v = p.objective().gradient(th) + lam * np.log(th * 5)
        assert np.ptp(v[th > 1e-250]) <= 1e-8 * max(1.0, lam)

    def test_needs_positive_lambda(self):
        with pytest.raises(ValueError):
            kl_glm_solve(linear_objective([1.0, 0.0]), 0.0)


class TestLasso:
    def test_orthogonal_closed_form(self):
        n = 6
        x = math.sqrt(n) * np.eye(n)
        y = np.array([2.0, -0.3, 0.9, -1.5, 0.0, 0.4]) * math.sqrt(n)
        lam = 0.5
        p = least_squares_problem(x, y)
        expect = soft_threshold(x.T @ y / n, lam)
        np.testing.assert_allclose(lasso_solve(p, lam).theta, expect, atol=1e-12)
        tr = ista_run(least_squares_objective(x, y), lam, np.zeros(n), StepSchedule.constant(1.0, 50), smoothness=1.0)
        assert np.abs(tr.final_theta - expect).max() <= 1e-8

    def test_zero_above_threshold(self):
        rng = rng_for(57)
        x = rng.standard_normal((20, 6))
        y = rng.standard_normal(20)
        lam = float(np.abs(x.T @ y).max() / 20)
        sol = lasso_solve(least_squares_problem(x, y), lam)
        np.testing.assert_array_equal(sol.theta, 0.0)

    def test_kkt(self):
        rng = rng_for(58)
        x = rng.standard_normal((30, 8))
        y = rng.standard_normal(30)
        p = least_squares_problem(x, y)
        sol = lasso_solve(p, 0.05)
        assert sol.converged and lasso_kkt_violation(p, sol.theta, 0.05) <= 1e-12

    def test_needs_gaussian(self):
        with pytest.raises(ValueError, match="gaussian"):
            lasso_solve(random_glm(rng_for(59), "bernoulli"), 0.1)

    def test_ista_elastic_net_inequality(self):
        # ISTA's basic inequality at z reads f(theta_T) - f(z) <= (||z||^2 - ||z - theta_T||^2)/(2 tau),
        # i.e. theta_T nearly minimizes the lasso objective plus a ridge term with coefficient 1/(2 tau)
        rng = rng_for(60)
        x = rng.standard_normal((25, 6))
        y = rng.standard_normal(25)
        L = float(np.linalg.eigvalsh(x.T @ x / 25).max())
        lam1 = 0.05
        tr = ista_run(least_squares_objective(x, y), lam1, np.zeros(6), StepSchedule.constant(1 / L, 40), smoothness=L)
        tau = tr.accumulated_time[-1]
        p = least_squares_problem(x, y)
        th = tr.final_theta
        for z in rng.standard_normal((20, 6)):
            lhs = elastic_net_objective(p, th, lam1, 0.0) + float((z - th) @ (z - th)) / (2 * tau)
            rhs = elastic_net_objective(p, z, lam1, 1.0 / (2 * tau))
            assert lhs <= rhs + 1e-10


class TestGridAndPath:
    def test_default_grid(self):
        g = lambda_grid()
        assert len(g) == 500
        assert g[0] == pytest.approx(1e-4, rel=1e-14) and g[-1] == pytest.approx(1e4, rel=1e-14)
        assert np.allclose(np.diff(np.log(g)), np.log(g[1] / g[0]))

    def test_parse_grid(self):
        assert parse_grid("1e-3:10:7") == (1e-3, 10.0, 7)
        with pytest.raises(ValueError):
            parse_grid("1:2")

    def test_single_point_matches_direct(self):
        p = random_glm(rng_for(61), "bernoulli")
        path = lambda_path_solve(p, "ridge", (0.3, 0.3, 1))
        np.testing.assert_array_equal(path[0].theta, ridge_glm_solve(p, 0.3).theta)

    def test_ridge_path_matches_closed_form(self):
        rng = rng_for(62)
        x = rng.standard_normal((40, 6))
        y = rng.standard_normal(40)
        path = lambda_path_solve(least_squares_problem(x, y), "ridge", (1e-4, 1e4, 100))
        for sol in path:
            np.testing.assert_allclose(sol.theta, ridge_closed_form(x, y, sol.lam), atol=1e-7)

    @pytest.mark.parametrize("kind,family", [("ridge", "gaussian"), ("ridge", "bernoulli"), ("ridge", "poisson"), ("kl", "gaussian"), ("kl", "bernoulli"), ("lasso", "gaussian")])
    def test_regularized_objective_nondecreasing_in_lambda(self, kind, family):
        p = random_glm(rng_for(63, len(family)), family, 40, 6)
        path = lambda_path_solve(p, kind, (1e-4, 1e4, 120))
        assert path.all_converged
        assert path.is_monotone(), path.monotonicity_violation()

    def test_path_csv(self, tmp_path):
        p = random_glm(rng_for(64), "gaussian", 10, 2)
        path = lambda_path_solve(p, "ridge", "0.1:1:3")
        path.to_csv(tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "lambda,objective,penalty,theta_0,theta_1,converged"
        assert len(lines) == 4

    def test_unknown_solver(self):
        with pytest.raises(ValueError, match="unknown solver"):
            lambda_path_solve(random_glm(rng_for(65), "gaussian"), "ridgeless")

    def test_small_lambda_endpoint_matches_gd_limit(self):
        rng = rng_for(66)
        x = rng.standard_normal((30, 4))
        y = rng.standard_normal(30)
        p = least_squares_problem(x, y)
        L = float(np.linalg.eigvalsh(x.T @ x / 30).max())
        tr = gd_run(p.objective(), np.zeros(4), StepSchedule.constant(1 / L, 20000), smoothness=L)
        ridge = lambda_path_solve(p, "ridge", (1e-8, 1e-6, 3))[0].theta
        np.testing.assert_allclose(ridge, tr.final_theta, atol=1e-4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lam=st.floats(1e-3, 1e2))
def test_ridge_zeroth_order_certificate(seed, lam):
    """Random perturbations never improve the ridge objective."""
    rng = np.random.default_rng(seed)
    p = random_glm(rng, "bernoulli", 20, 3)
    sol = ridge_glm_solve(p, lam)
    f = p.objective()
    base = f(sol.theta) + lam * float(sol.theta @ sol.theta)
    for _ in range(20):
        th = sol.theta + 1e-3 * rng.standard_normal(3)
        assert f(th) + lam * float(th @ th) >= base - 1e-12
