import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicitreg.geometry import (
    BregmanGeometry,
    DomainError,
    entropic_step,
    kl_divergence,
    project_ball,
)

simplex_pairs = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).dirichlet(np.ones(6), size=2))


class TestDivergence:
    def test_kl_of_identical_uniforms(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_kl_single_atom(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)

    def test_euclidean_is_half_squared_distance(self):
        rng = np.random.default_rng(0)
        u, v = rng.standard_normal((2, 7))
        assert BregmanGeometry.euclidean().divergence(u, v) == pytest.approx(0.5 * np.linalg.norm(u - v) ** 2, rel=1e-14)

    def test_burg_matches_potential_definition(self):
        rng = np.random.default_rng(1)
        g = BregmanGeometry.burg()
        u, v = rng.uniform(0.1, 3, (2, 5))
        direct = g.potential(u) - g.potential(v) - g.mirror_map(v) @ (u - v)
        assert g.divergence(u, v) == pytest.approx(direct, rel=1e-12)

    def test_negative_entropy_matches_potential_definition(self):
        rng = np.random.default_rng(2)
        g = BregmanGeometry.negative_entropy()
        u, v = rng.dirichlet(np.ones(5), size=2)
        direct = g.potential(u) - g.potential(v) - g.mirror_map(v) @ (u - v)
        assert g.divergence(u, v) == pytest.approx(direct, abs=1e-14)

    def test_kl_needs_positive_second_argument(self):
        with pytest.raises(ValueError, match="interior"):
            kl_divergence([0.5, 0.5], [1.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            BregmanGeometry.euclidean().divergence(np.zeros(2), np.zeros(3))


@settings(max_examples=100, deadline=None)
@given(simplex_pairs)
def test_pinsker(pair):
    u, v = pair
    assert kl_divergence(u, v) >= 0.5 * np.abs(u - v).sum() ** 2 - 1e-15


@settings(max_examples=100, deadline=None)
@given(simplex_pairs)
def test_divergences_nonnegative(pair):
    u, v = pair
    for g in (BregmanGeometry.euclidean(), BregmanGeometry.negative_entropy(), BregmanGeometry.burg()):
        assert g.divergence(u, v) >= -1e-15


class TestSteps:
    def test_project_ball_radial_scaling(self):
        np.testing.assert_allclose(project_ball([3.0, 4.0], 1.0), [0.6, 0.8], rtol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(0.01, 100))
    def test_project_ball_idempotent(self, v, b):
        once = project_ball(v, b)
        np.testing.assert_allclose(project_ball(once, b), once, rtol=1e-12, atol=0)
        assert np.linalg.norm(once) <= b * (1 + 1e-12)

    def test_project_ball_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            project_ball([1.0], 0.0)

    def test_entropic_step_shift_invariance(self):
        th = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(entropic_step(th, np.full(3, 7.0), 0.9), th, rtol=1e-15)

    def test_entropic_step_two_point(self):
        out = entropic_step(np.array([0.5, 0.5]), np.array([0.0, math.log(2)]), 1.0)
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], rtol=1e-15)

    def test_entropic_step_floors_coordinates(self):
        out = entropic_step(np.array([0.5, 0.5]), np.array([0.0, 1e6]), 1.0)
        assert out.min() > 0 and out.sum() == pytest.approx(1.0, abs=1e-15)

    def test_burg_step_closed_form(self):
        th = np.array([0.5, 2.0])
        g = np.array([0.3, 1.0])
        out = BregmanGeometry.burg().mirror_step(th, g, 0.1)
        np.testing.assert_allclose(out, 1.0 / (1.0 / th + 0.1 * g), rtol=1e-15)

    def test_burg_step_leaving_domain(self):
        with pytest.raises(DomainError):
            BregmanGeometry.burg().mirror_step(np.array([1.0]), np.array([-20.0]), 0.1)

    def test_euclidean_step_with_radius(self):
        g = BregmanGeometry.euclidean(radius=1.0)
        np.testing.assert_allclose(g.mirror_step(np.zeros(2), np.array([-3.0, -4.0]), 1.0), [0.6, 0.8])


class TestGeometryValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown geometry"):
            BregmanGeometry("hyperbolic")

    def test_radius_only_for_euclidean(self):
        with pytest.raises(ValueError, match="radius"):
            BregmanGeometry("burg_positive_orthant", 1.0)

    def test_strong_convexity(self):
        assert BregmanGeometry.euclidean().strong_convexity == 1.0
        assert BregmanGeometry.negative_entropy().strong_convexity == 1.0
        assert BregmanGeometry.burg().strong_convexity is None

    def test_interior_checks(self):
        s = BregmanGeometry.negative_entropy()
        assert s.in_interior([0.5, 0.5])
        assert not s.in_interior([1.0, 0.0])
        assert not s.in_interior([0.5, 0.6])
        assert not BregmanGeometry.burg().in_interior([1.0, -1.0])
