import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from manifold_bsde.convexity import coordinate_ball
from manifold_bsde.drift import (
    MollifiedDrift,
    TruncationParams,
    bump_quadrature,
    collar_gap,
    constant_drift,
    cutoff,
    default_collar,
    gamma_assemble,
    gamma_bound,
    gradient_drift,
    linear_z_drift,
    lipschitz_probe,
    load_drift,
    mollify,
    radial_drift,
    truncate,
    truncation_lipschitz,
    zero_drift,
)
from manifold_bsde.geometry import flat_chart
from manifold_bsde.utilities.errors import AccuracyError, ConfigError, ParameterError, PreconditionError

from .dummy_fixtures import half_plane, unconstrained_gamma


class TestTruncation(unittest.TestCase):
    def setUp(self):
        self.params = TruncationParams(0.5)

    def test_params(self):
        self.assertEqual(self.params.threshold, 2.0)
        self.assertEqual(self.params.width, 2.0)
        for bad in (0.0, 1.0, -0.1):
            with self.assertRaises(ParameterError):
                TruncationParams(bad)

    def test_identity_below_threshold(self):
        z = np.array([[[1.0], [1.0]], [[0.0], [-2.0]]])
        np.testing.assert_array_equal(truncate(z, self.params), z)

    @settings(max_examples=50)
    @given(st.floats(min_value=0.0, max_value=1e4))
    def test_never_grows(self, size):
        z = np.array([[[size], [0.0]]])
        shrunk = truncate(z, self.params)
        self.assertLessEqual(float(np.linalg.norm(shrunk)), size + 1e-12)

    def test_lipschitz(self):
        self.assertLess(truncation_lipschitz(self.params, 2, 1, sample_count=500), 2.0)


class TestCutoff(unittest.TestCase):
    def setUp(self):
        self.domain = coordinate_ball(flat_chart(2, 5.0), [0.0, 0.0], 1.0, collar=2.0)

    def test_profile(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0], [np.sqrt(1.5), 0.0], [np.sqrt(2.0), 0.0], [3.0, 0.0]])
        weights = cutoff(self.domain, points)
        np.testing.assert_allclose(weights[[0, 1, 3, 4]], [1.0, 1.0, 0.0, 0.0], atol=1e-12)
        self.assertAlmostEqual(float(weights[2]), 0.5)

    def test_outside_chart(self):
        self.assertEqual(float(cutoff(self.domain, np.array([[9.0, 0.0]]))[0]), 0.0)

    def test_bad_collar(self):
        with self.assertRaises(ConfigError):
            cutoff(self.domain, np.zeros((1, 2)), collar=0.5)


class TestGamma(unittest.TestCase):
    def test_flat_constant_drift(self):
        gamma = unconstrained_gamma(flat_chart(1), constant_drift([0.3]))
        value = gamma(np.zeros((4, 1)), np.linspace(-1, 1, 4)[:, None], np.ones((4, 1, 1)))
        np.testing.assert_allclose(value, -0.3)

    def test_connection_term(self):
        gamma = unconstrained_gamma(half_plane())
        value = gamma(np.zeros(1), np.array([0.0, 2.0]), np.array([[1.0], [0.0]]))
        np.testing.assert_allclose(value, [0.0, 0.25])

    def test_truncated_argument(self):
        # ||z|| = 10 is far beyond 1/eps = 2, so the quadratic term stays bounded
        gamma = unconstrained_gamma(half_plane())
        value = gamma(np.zeros(1), np.array([0.0, 2.0]), np.array([[10.0], [0.0]]))
        self.assertLess(float(value[1]), 0.25 * 10.0 ** 2)

    def test_cutoff_kills_drift(self):
        domain = coordinate_ball(flat_chart(1), [0.0], 1.0, collar=2.0)
        gamma = gamma_assemble(domain.chart, domain, constant_drift([1.0]), TruncationParams(0.5))
        value = gamma(np.zeros((2, 1)), np.array([[0.0], [3.0]]), np.zeros((2, 1, 1)))
        np.testing.assert_allclose(value[:, 0], [-1.0, 0.0])

    def test_default_collar(self):
        domain = coordinate_ball(flat_chart(1), [0.0], 1.0)
        gamma = gamma_assemble(domain.chart, domain, zero_drift(1), TruncationParams(0.5))
        self.assertGreater(gamma.collar, domain.level)

    def test_dimension_mismatch(self):
        with self.assertRaises(ConfigError):
            unconstrained_gamma(half_plane(), constant_drift([1.0]))

    def test_bound(self):
        gamma = unconstrained_gamma(flat_chart(1), constant_drift([0.3]))
        points = np.linspace(-1, 1, 5)[:, None]
        self.assertAlmostEqual(gamma_bound(gamma, points, np.zeros((5, 1)), 1.0), 0.3)


class TestDriftFields(unittest.TestCase):
    def test_linear_in_z(self):
        drift = linear_z_drift([0.5, 2.0], 2)
        z = np.array([[1.0, 1.0], [0.0, 1.0]])
        np.testing.assert_allclose(drift(np.zeros(1), np.zeros(2), z), [2.5, 2.0])
        self.assertTrue(drift.z_dependent)

    def test_radial(self):
        drift = radial_drift(2.0, [0.0, 1.0])
        np.testing.assert_allclose(drift(np.zeros(1), np.array([1.0, 1.0]), np.zeros((2, 1))), [2.0, 0.0])

    def test_gradient(self):
        drift = gradient_drift("half-squared-norm", 1)
        np.testing.assert_allclose(drift(np.zeros(1), np.array([3.0]), np.zeros((1, 1))), [3.0])
        self.assertAlmostEqual(float(drift.potential(np.zeros(1), np.array([3.0]))), 4.5)
        curved = gradient_drift("half-squared-norm", 2, half_plane())
        np.testing.assert_allclose(curved(np.zeros(1), np.array([1.0, 2.0]), np.zeros((2, 1))), [4.0, 8.0])
        with self.assertRaises(ConfigError):
            gradient_drift("quartic", 1)

    def test_load(self):
        drift = load_drift({"form": "constant", "value": 0.3, "L": 0.0, "L2": 0.3}, 1, 1, 1)
        self.assertEqual(drift.lipschitz, 0.0)
        self.assertEqual(drift.bound, 0.3)
        expression = load_drift({"form": "expression", "components": ["b1 + x1 * z11"]}, 1, 1, 1)
        value = expression(np.array([[1.0]]), np.array([[2.0]]), np.array([[[3.0]]]))
        np.testing.assert_allclose(value, [[7.0]])
        with self.assertRaises(ConfigError):
            load_drift({"form": "constant", "strength": 1.0}, 1, 1, 1)
        with self.assertRaises(ConfigError):
            load_drift({"form": "cubic"}, 1, 1, 1)

    def test_lipschitz_probe(self):
        measured = lipschitz_probe(constant_drift([0.3, 0.4]), sample_count=200)
        self.assertEqual(measured.lipschitz, 0.0)
        self.assertAlmostEqual(measured.bound, 0.5)
        linear = lipschitz_probe(radial_drift(2.0, [0.0]), sample_count=200)
        self.assertLessEqual(linear.lipschitz, 2.0 + 1e-9)
        self.assertGreater(linear.lipschitz, 0.5)


class TestMollification(unittest.TestCase):
    def test_quadrature(self):
        points, weights = bump_quadrature(2, 4, 7)
        self.assertAlmostEqual(float(weights.sum()), 1.0)
        self.assertTrue(np.all(np.abs(points) <= 0.25))
        np.testing.assert_allclose(weights @ points, 0.0, atol=1e-14)

    def test_linear_drift_is_reproduced(self):
        drift = radial_drift(1.5, [0.0])
        smooth = MollifiedDrift(drift, flat_chart(1), 4, 1, 1)
        x = np.array([[0.3], [-0.7]])
        np.testing.assert_allclose(smooth(np.zeros((2, 1)), x, np.zeros((2, 1, 1))), 1.5 * x, atol=1e-12)

    def test_outward_shift(self):
        domain = coordinate_ball(flat_chart(1), [0.0], 1.0)
        result = mollify(constant_drift([0.0]), 8, domain, TruncationParams(0.5), sample_count=8)
        self.assertAlmostEqual(result.c_hat, 0.0)
        # G = 2 and r_min = 2 on the unit circle
        self.assertAlmostEqual(result.shift, 0.5)
        self.assertAlmostEqual(result.margin, 1.0 / 8)
        np.testing.assert_allclose(result.drift(np.zeros(1), np.array([1.0]), np.zeros((1, 1))), [0.0625])

    def test_margin_on_small_domain(self):
        domain = coordinate_ball(flat_chart(1), [0.0], 0.1)
        result = mollify(zero_drift(1), 25, domain, TruncationParams(0.5), sample_count=8)
        self.assertAlmostEqual(result.shift, 5.0, places=6)
        self.assertGreaterEqual(result.margin, (1.0 - 1e-9) / 25)

    def test_level_inside_collar_gap(self):
        domain = coordinate_ball(flat_chart(1), [0.0], 0.1)
        with self.assertRaises(PreconditionError):
            mollify(zero_drift(1), 10, domain, TruncationParams(0.5), sample_count=8)
        with self.assertRaises(PreconditionError):
            mollify(zero_drift(1), 25, domain, TruncationParams(0.5), sample_count=8, collar=0.12)

    def test_inward_drift_is_rejected(self):
        domain = coordinate_ball(flat_chart(1), [0.0], 1.0)
        with self.assertRaises(AccuracyError):
            mollify(constant_drift([1.0]), 8, domain, TruncationParams(0.5), sample_count=64)

    def test_collar_helpers(self):
        domain = coordinate_ball(flat_chart(1), [0.0], 1.0)
        self.assertAlmostEqual(default_collar(domain), 1.501)
        self.assertEqual(default_collar(coordinate_ball(flat_chart(1), [0.0], 1.0, collar=2.0)), 2.0)
        inner, outer = np.array([[1.0], [-1.0]]), np.array([[2.0], [-2.0]])
        self.assertAlmostEqual(collar_gap(domain, 4.0, inner, outer), 0.75)


if __name__ == "__main__":
    unittest.main()
