import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicitreg.geometry import BregmanGeometry, DomainError, kl_divergence
from implicitreg.glm_model import smoothness_constant
from implicitreg.optimizers import (
    Objective,
    StepSchedule,
    egd_run,
    gd_run,
    ista_run,
    least_squares_objective,
    linear_objective,
    mirror_descent_run,
    nolips_run,
    plip_objective,
    projected_gd_run,
    quadratic_objective,
    soft_threshold,
)

from _problems import egd_step, random_glm, random_least_squares, rng_for


def ls_step(x) -> float:
    return 1.0 / np.linalg.eigvalsh(x.T @ x / x.shape[0]).max()


class TestSchedule:
    def test_accumulated_time_across_phases(self):
        s = StepSchedule([(0.1, 3), (1.0, 2)])
        assert [s.accumulated_time(t) for t in range(6)] == pytest.approx([0, 0.1, 0.2, 0.3, 1.3, 2.3])
        assert s.total_iterations == 5
        assert s.phase_boundaries() == [3, 5]

    def test_parse_and_format(self):
        s = StepSchedule.parse("1e-4:10000, 0.001:100000")
        assert s.phases == ((1e-4, 10000), (1e-3, 100000))
        assert StepSchedule.parse(s.format()) == s

    @pytest.mark.parametrize("bad", ["0:10", "-1:3", "0.1:0", "0.1:2.5", "abc", "0.1"])
    def test_parse_rejects(self, bad):
        with pytest.raises(ValueError):
            StepSchedule.parse(bad)

    def test_eta_at(self):
        s = StepSchedule([(0.1, 2), (0.5, 1)])
        assert [s.eta_at(t) for t in range(3)] == [0.1, 0.1, 0.5]
        with pytest.raises(IndexError):
            s.eta_at(3)


class TestGradientDescent:
    def test_one_step_quadratic(self):
        f = quadratic_objective([[1.0]], [1.0], 0.5)
        tr = gd_run(f, [0.0], StepSchedule.constant(1.0, 1), smoothness=1.0)
        assert tr.final_theta[0] == 1.0
        assert tr.final_objective == 0.0

    def test_half_norm_one_step(self):
        f = quadratic_objective(np.eye(3), np.zeros(3))
        tr = gd_run(f, [1.0, -2.0, 3.0], StepSchedule.constant(1.0, 1), smoothness=1.0)
        np.testing.assert_array_equal(tr.final_theta, 0.0)

    def test_least_squares_converges_to_normal_equations(self):
        rng = rng_for(20)
        x, y, f = random_least_squares(rng, 6, 3)
        eta = ls_step(x)
        tr = gd_run(f, np.zeros(3), StepSchedule.constant(eta, 500), smoothness=1 / eta)
        assert np.linalg.norm(f.gradient(tr.final_theta)) <= 1e-6
        np.testing.assert_allclose(tr.final_theta, np.linalg.solve(x.T @ x, x.T @ y), atol=1e-5)

    def test_rejects_too_large_step(self):
        f = quadratic_objective(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError, match="exceeds"):
            gd_run(f, np.zeros(2), StepSchedule.constant(1.5, 3), smoothness=1.0)

    def test_warns_without_smoothness(self):
        from implicitreg.optimizers import StepSizeWarning

        f = quadratic_objective(np.eye(2), np.zeros(2))
        with pytest.warns(StepSizeWarning):
            gd_run(f, np.zeros(2), StepSchedule.constant(0.5, 3))

    def test_nonfinite_gradient_raises(self):
        f = Objective(lambda th: 0.0, lambda th: np.array([np.nan]))
        with pytest.raises(FloatingPointError, match="iteration 0"):
            gd_run(f, [0.0], StepSchedule.constant(0.1, 2), smoothness=1.0)

    def test_geometric_recording(self):
        f = quadratic_objective(np.eye(2), np.zeros(2))
        s = StepSchedule([(1e-3, 500), (1e-2, 500)])
        tr = gd_run(f, np.ones(2), s, smoothness=1.0)
        assert list(tr.steps[:101]) == list(range(101))
        assert 500 in tr.steps and 1000 in tr.steps
        assert len(tr) < 1000
        np.testing.assert_allclose(tr.accumulated_time, [s.accumulated_time(int(t)) for t in tr.steps], rtol=1e-12)

    def test_record_stride(self):
        f = quadratic_objective(np.eye(2), np.zeros(2))
        tr = gd_run(f, np.ones(2), StepSchedule.constant(0.1, 25), smoothness=1.0, record=10)
        assert list(tr.steps) == [0, 10, 20, 25]
        with pytest.raises(KeyError):
            tr.theta_at(11)

    def test_trace_csv(self, tmp_path):
        f = quadratic_objective(np.eye(2), np.zeros(2))
        tr = gd_run(f, np.ones(2), StepSchedule.constant(0.1, 3), smoothness=1.0, record="all")
        tr.to_csv(tmp_path / "t.csv", include_theta=True)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,tau,objective,theta_0,theta_1"
        assert len(lines) == 5


class TestProjectedGradientDescent:
    def test_converges_to_projected_optimum(self):
        f = quadratic_objective(np.eye(2), [2.0, 0.0])
        tr = projected_gd_run(f, np.zeros(2), StepSchedule.constant(0.5, 200), radius=1.0, smoothness=1.0)
        np.testing.assert_allclose(tr.final_theta, [1.0, 0.0], atol=1e-12)

    def test_interior_matches_gd(self):
        rng = rng_for(21)
        x, y, f = random_least_squares(rng, 10, 3)
        eta = ls_step(x)
        s = StepSchedule.constant(eta, 100)
        a = gd_run(f, np.zeros(3), s, smoothness=1 / eta)
        b = projected_gd_run(f, np.zeros(3), s, radius=1e6, smoothness=1 / eta)
        np.testing.assert_allclose(a.iterates, b.iterates, atol=1e-12)

    def test_start_outside_ball(self):
        f = quadratic_objective(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError, match="radius"):
            projected_gd_run(f, [3.0, 0.0], StepSchedule.constant(0.1, 1), radius=1.0)


class TestExponentiatedGradient:
    def test_zero_gradient_is_stationary(self):
        tr = egd_run(linear_objective(np.zeros(4)), np.full(4, 0.25), StepSchedule.constant(0.3, 10), smoothness=1.0)
        np.testing.assert_array_equal(tr.iterates, 0.25)

    def test_constant_gradient_is_stationary(self):
        th0 = np.array([0.1, 0.2, 0.7])
        tr = egd_run(linear_objective(np.full(3, 4.2)), th0, StepSchedule.constant(0.3, 5), smoothness=1.0)
        np.testing.assert_allclose(tr.final_theta, th0, rtol=1e-14)

    def test_two_point_update(self):
        tr = egd_run(linear_objective([0.0, math.log(2)]), [0.5, 0.5], StepSchedule.constant(1.0, 1), smoothness=1.0)
        np.testing.assert_allclose(tr.final_theta, [2 / 3, 1 / 3], rtol=1e-15)

    @pytest.mark.parametrize("bad", [[0.5, 0.6], [1.0, 0.0], [-0.1, 1.1]])
    def test_start_must_be_interior_simplex(self, bad):
        with pytest.raises(ValueError):
            egd_run(linear_objective([0.0, 1.0]), bad, StepSchedule.constant(0.1, 1))

    def test_iterates_stay_in_simplex(self):
        rng = rng_for(22)
        p = random_glm(rng, "bernoulli", 40, 6)
        tr = egd_run(p.objective(), np.full(6, 1 / 6), StepSchedule.constant(egd_step(p), 300), smoothness=1 / egd_step(p))
        assert np.all(tr.iterates > 0)
        np.testing.assert_allclose(tr.iterates.sum(1), 1.0, atol=1e-12)


class TestMirrorDescent:
    @pytest.mark.parametrize("seed", range(50))
    def test_euclidean_reduces_to_gd(self, seed):
        rng = rng_for(23, seed)
        x, y, f = random_least_squares(rng, 8, 3)
        eta = ls_step(x)
        s = StepSchedule.constant(eta, 40)
        a = gd_run(f, np.zeros(3), s, smoothness=1 / eta)
        b = mirror_descent_run(f, BregmanGeometry.euclidean(), np.zeros(3), s, smoothness=1 / eta)
        np.testing.assert_array_equal(a.iterates, b.iterates)

    @pytest.mark.parametrize("seed", range(50))
    def test_negative_entropy_reduces_to_egd(self, seed):
        rng = rng_for(24, seed)
        p = random_glm(rng, "gaussian", 12, 4)
        eta = egd_step(p)
        s = StepSchedule.constant(eta, 40)
        th0 = np.full(4, 0.25)
        a = egd_run(p.objective(), th0, s, smoothness=1 / eta)
        b = mirror_descent_run(p.objective(), BregmanGeometry.negative_entropy(), th0, s, smoothness=1 / eta)
        np.testing.assert_allclose(a.iterates, b.iterates, atol=1e-12)

    def test_burg_linear_one_step(self):
        g = np.array([0.5, 2.0, 1.0])
        th0 = np.array([1.0, 0.5, 2.0])
        tr = mirror_descent_run(linear_objective(g), BregmanGeometry.burg(), th0, StepSchedule.constant(0.1, 1), smoothness=10.0)
        np.testing.assert_allclose(tr.final_theta, 1.0 / (1.0 / th0 + 0.1 * g), rtol=1e-15)

    def test_burg_domain_error_names_iteration(self):
        with pytest.raises(DomainError, match="iteration"):
            mirror_descent_run(linear_objective([-5.0]), BregmanGeometry.burg(), [1.0], StepSchedule.constant(0.1, 10), smoothness=10.0)

    def test_start_outside_domain(self):
        with pytest.raises(ValueError, match="interior"):
            mirror_descent_run(linear_objective([1.0, 1.0]), BregmanGeometry.negative_entropy(), [0.7, 0.7], StepSchedule.constant(0.1, 1))


class TestIsta:
    def test_soft_threshold(self):
        np.testing.assert_array_equal(soft_threshold([3.0, -0.5], 1.0), [2.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(0, 10))
    def test_soft_threshold_against_loop(self, v, t):
        expect = [math.copysign(max(abs(a) - t, 0.0), a) if abs(a) > t else 0.0 for a in v]
        np.testing.assert_allclose(soft_threshold(v, t), expect, rtol=1e-15, atol=0)

    def test_zero_threshold_is_identity(self):
        v = np.array([1.5, -2.0, 0.0])
        np.testing.assert_array_equal(soft_threshold(v, 0.0), v)

    def test_zero_weight_matches_gd(self):
        rng = rng_for(25)
        x, y, f = random_least_squares(rng, 10, 4)
        eta = ls_step(x)
        s = StepSchedule.constant(eta, 50)
        a = gd_run(f, np.zeros(4), s, smoothness=1 / eta)
        b = ista_run(f, 0.0, np.zeros(4), s, smoothness=1 / eta)
        np.testing.assert_array_equal(a.iterates, b.iterates)

    def test_orthogonal_design_lasso(self):
        # X = sqrt(n) I makes X^T X / n = I, so the lasso solution soft-thresholds X^T Y / n at lambda
        n = 5
        x = math.sqrt(n) * np.eye(n)
        y = np.array([3.0, -0.2, 1.0, -4.0, 0.05]) * math.sqrt(n)
        lam = 0.5
        f = least_squares_objective(x, y)
        tr = ista_run(f, lam, np.zeros(n), StepSchedule.constant(1.0, 5), smoothness=1.0)
        np.testing.assert_allclose(tr.final_theta, soft_threshold(x.T @ y / n, lam), atol=1e-8)

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            ista_run(linear_objective([1.0]), -1.0, [0.0], StepSchedule.constant(0.1, 1))


class TestNoLips:
    def test_one_dimensional_minimum(self):
        x = np.ones((4, 1))
        y = np.full(4, 3.0)
        tr = nolips_run(x, y, [1.0], StepSchedule.constant(1 / 12, 2000))
        assert tr.final_theta[0] == pytest.approx(3.0, rel=1e-8)
        assert tr.final_objective == pytest.approx(0.0, abs=1e-12)

    def test_zero_iterations_not_allowed_and_start_recorded(self):
        with pytest.raises(ValueError):
            StepSchedule.constant(0.1, 0)
        x = np.ones((2, 1))
        tr = nolips_run(x, np.ones(2), [0.5], StepSchedule.constant(0.1, 1))
        np.testing.assert_array_equal(tr.theta0, [0.5])

    def test_rejects_nonpositive_data(self):
        with pytest.raises(ValueError, match="positive design"):
            nolips_run(np.array([[1.0], [-1.0]]), np.ones(2), [1.0], StepSchedule.constant(0.01, 1))
        with pytest.raises(ValueError, match="positive responses"):
            nolips_run(np.ones((2, 1)), np.array([1.0, 0.0]), [1.0], StepSchedule.constant(0.01, 1))

    def test_step_above_inverse_smoothness(self):
        with pytest.raises(ValueError, match="exceeds"):
            nolips_run(np.ones((2, 1)), np.ones(2), [1.0], StepSchedule.constant(1.0, 1))

    def test_plip_value_is_divergence(self):
        rng = rng_for(26)
        x = rng.uniform(0.1, 1, (5, 2))
        y = rng.uniform(0.5, 2, 5)
        th = rng.uniform(0.5, 2, 2)
        m = x @ th
        d_bs = float(np.sum(y * np.log(y / m) - y + m)) / 5
        assert plip_objective(x, y).value(th) == pytest.approx(d_bs, rel=1e-12)


@pytest.mark.parametrize("family", ["gaussian", "bernoulli", "poisson"])
def test_objective_monotone_for_every_algorithm(family):
    rng = rng_for(27, len(family))
    p = random_glm(rng, family, 25, 4)
    f = p.objective()
    L2 = smoothness_constant(p, "euclidean", radius=2.0)
    L1 = smoothness_constant(p, "l1_simplex")
    traces = [
        projected_gd_run(f, np.zeros(4), StepSchedule.constant(1 / L2, 300), radius=2.0, smoothness=L2),
        egd_run(f, np.full(4, 0.25), StepSchedule.constant(1 / L1, 300), smoothness=L1),
    ]
    if family != "poisson":
        traces.append(gd_run(f, np.zeros(4), StepSchedule.constant(1 / L2, 300), smoothness=L2))
    for tr in traces:
        assert np.max(np.diff(tr.objective_values)) <= 1e-9


def test_egd_kl_to_interior_optimum_monotone():
    # least squares on the simplex with an interior minimizer s: X theta = X s exactly
    rng = rng_for(28)
    x = rng.standard_normal((30, 5))
    s = rng.dirichlet(np.ones(5) * 5)
    f = least_squares_objective(x, x @ s)
    L1 = float((x**2).sum(0).max() / 30)
    tr = egd_run(f, np.full(5, 0.2), StepSchedule.constant(1 / L1, 2000), smoothness=L1, record="all")
    kls = np.array([kl_divergence(s, th) for th in tr.iterates])
    assert np.max(np.diff(kls)) <= 1e-12
    assert kls[-1] < 1e-6 * kls[0]
