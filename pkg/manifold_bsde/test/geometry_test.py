import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from manifold_bsde.geometry import (
    FINITE_DIFFERENCE,
    check_metric,
    christoffel,
    distance,
    distance_batch,
    exp_interval_chart,
    flat_chart,
    geodesic_shoot,
    geodesic_speeds,
    interval_chart,
    load_chart,
    log_map,
    manifold_hessian,
    norm_equivalence_constant,
    parallel_transport,
    product_chart,
    riemannian_norm,
    sphere_cap_chart,
)
from manifold_bsde.utilities.errors import ConfigError, DimensionError, DomainError, EscapeError, MetricError

from .dummy_fixtures import E, half_plane


class TestCharts(unittest.TestCase):
    def setUp(self):
        self.plane = half_plane()

    def test_half_plane_christoffel(self):
        gamma = christoffel(self.plane, [0.0, 2.0])
        self.assertAlmostEqual(gamma[0, 0, 1], -0.5)
        self.assertAlmostEqual(gamma[0, 1, 0], -0.5)
        self.assertAlmostEqual(gamma[1, 0, 0], 0.5)
        self.assertAlmostEqual(gamma[1, 1, 1], -0.5)
        self.assertAlmostEqual(gamma[0, 0, 0], 0.0)
        self.assertAlmostEqual(gamma[1, 0, 1], 0.0)

    def test_finite_difference_mode(self):
        points = np.array([[0.3, 0.7], [-1.0, 2.5], [2.0, 1.0]])
        closed = self.plane.christoffel_batch(points)
        numeric = self.plane.with_mode(FINITE_DIFFERENCE).christoffel_batch(points)
        np.testing.assert_allclose(numeric, closed, atol=1e-6)
        cap = sphere_cap_chart(1.0)
        np.testing.assert_allclose(cap.with_mode(FINITE_DIFFERENCE).christoffel_batch(points[:1] * 0.5),
                                   cap.christoffel_batch(points[:1] * 0.5), atol=1e-6)

    def test_flat(self):
        chart = flat_chart(2)
        self.assertTrue(np.all(christoffel(chart, [1.0, -1.0]) == 0))
        self.assertEqual(distance(chart, [0.0, 0.0], [3.0, 4.0]), 5.0)
        self.assertTrue(chart.hadamard)

    def test_exp_interval(self):
        chart = exp_interval_chart()
        self.assertAlmostEqual(float(christoffel(chart, [0.3])[0, 0, 0]), 1.0)
        self.assertAlmostEqual(distance(chart, [0.0], [1.0]), E - 1.0)
        # the quadrature fallback agrees with the closed form
        generic = interval_chart(lambda x: np.exp(2.0 * x), (-3.0, 3.0))
        self.assertAlmostEqual(distance(generic, [0.0], [1.0]), E - 1.0, places=8)
        self.assertAlmostEqual(float(christoffel(generic, [0.3])[0, 0, 0]), 1.0, places=5)

    def test_outside_chart(self):
        with self.assertRaises(DomainError):
            christoffel(self.plane, [0.0, -1.0])
        with self.assertRaises(DimensionError):
            christoffel(self.plane, [0.0, 1.0, 2.0])

    def test_check_metric(self):
        self.assertGreater(check_metric(self.plane), 0.0)
        with self.assertRaises(MetricError):
            check_metric(interval_chart(lambda x: -np.ones(np.shape(x)), (0.0, 1.0)))

    def test_load_chart(self):
        chart = load_chart({"metric": "half-plane"})
        self.assertEqual(chart.dimension, 2)
        custom = load_chart({"metric": [["1/x2**2", "0"], ["0", "1/x2**2"]], "bounds": [[-1, 1], [0.5, 2]]})
        self.assertEqual(custom.christoffel_mode, FINITE_DIFFERENCE)
        np.testing.assert_allclose(christoffel(custom, [0.0, 1.0]), christoffel(self.plane, [0.0, 1.0]), atol=1e-5)
        with self.assertRaises(ConfigError):
            load_chart({"metric": "torus"})
        with self.assertRaises(ConfigError):
            load_chart({"metric": "flat", "colour": "red"})

    def test_sphere_cap_limits(self):
        with self.assertRaises(ConfigError):
            sphere_cap_chart(1.0, cap_radius=4.0)
        cap = sphere_cap_chart(1.0)
        self.assertEqual(cap.curvature_bound, 1.0)
        self.assertFalse(cap.hadamard)

    def test_product_chart(self):
        product = product_chart(self.plane)
        self.assertEqual(product.dimension, 4)
        gamma = christoffel(product, [0.0, 2.0, 0.0, 1.0])
        np.testing.assert_allclose(gamma[:2, :2, :2], christoffel(self.plane, [0.0, 2.0]))
        np.testing.assert_allclose(gamma[2:, 2:, 2:], christoffel(self.plane, [0.0, 1.0]))
        self.assertEqual(float(np.abs(gamma[:2, 2:, 2:]).max()), 0.0)


class TestKernels(unittest.TestCase):
    def setUp(self):
        self.plane = half_plane()

    def test_riemannian_norm(self):
        self.assertAlmostEqual(riemannian_norm(self.plane, [0.0, 2.0], [2.0, 0.0]), 1.0)
        self.assertAlmostEqual(riemannian_norm(flat_chart(2), [0.0, 0.0], [[3.0], [4.0]]), 5.0)

    def test_geodesic_shoot(self):
        end = geodesic_shoot(self.plane, [0.0, 1.0], [0.0, 1.0], 1.0)
        np.testing.assert_allclose(end, [0.0, E], atol=1e-7)
        np.testing.assert_allclose(geodesic_shoot(self.plane, [0.3, 1.0], [0.0, 0.0]), [0.3, 1.0])

    def test_constant_speed(self):
        speeds = geodesic_speeds(self.plane, [0.0, 1.0], [0.7, 0.2], 1.0)
        np.testing.assert_allclose(speeds, speeds[0], rtol=1e-7)

    def test_escape(self):
        with self.assertRaises(EscapeError) as context:
            geodesic_shoot(self.plane, [0.0, 1.0], [0.0, -10.0], 1.0)
        self.assertLess(context.exception.exit_time, 1.0)

    def test_flat_escape(self):
        chart = flat_chart(2, half_width=1.0)
        np.testing.assert_allclose(geodesic_shoot(chart, [0.0, 0.0], [0.5, -0.5]), [0.5, -0.5])
        with self.assertRaises(EscapeError) as context:
            geodesic_shoot(chart, [0.0, 0.5], [0.0, 2.0], 1.0)
        self.assertAlmostEqual(context.exception.exit_time, 0.25)
        with self.assertRaises(EscapeError) as context:
            geodesic_shoot(chart, [0.5, 0.0], [-3.0, 1.0], 1.0)
        self.assertAlmostEqual(context.exception.exit_time, 0.5)

    def test_log_map(self):
        np.testing.assert_allclose(log_map(self.plane, [0.0, 1.0], [0.0, E]), [0.0, 1.0], atol=1e-7)
        v = log_map(self.plane, [0.2, 0.8], [-0.4, 1.5])
        np.testing.assert_allclose(geodesic_shoot(self.plane, [0.2, 0.8], v), [-0.4, 1.5], atol=1e-8)
        self.assertAlmostEqual(riemannian_norm(self.plane, [0.2, 0.8], v), distance(self.plane, [0.2, 0.8], [-0.4, 1.5]),
                               places=6)

    def test_distance(self):
        self.assertAlmostEqual(distance(self.plane, [0.0, 1.0], [0.0, E]), 1.0)
        self.assertEqual(distance(self.plane, [0.5, 1.5], [0.5, 1.5]), 0.0)
        batch = distance_batch(self.plane, np.array([[0.0, 1.0], [0.0, 1.0]]), np.array([[0.0, E], [0.0, 1.0]]))
        np.testing.assert_allclose(batch, [1.0, 0.0])

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1.0, 1.0), st.floats(0.5, 2.0), st.floats(-1.0, 1.0), st.floats(0.5, 2.0))
    def test_distance_symmetric(self, x1, y1, x2, y2):
        forward = distance(self.plane, [x1, y1], [x2, y2])
        backward = distance(self.plane, [x2, y2], [x1, y1])
        self.assertAlmostEqual(forward, backward, places=10)
        self.assertGreaterEqual(forward, 0.0)

    def test_parallel_transport(self):
        moved = parallel_transport(self.plane, [0.0, 1.0], [0.0, E], [1.0, 0.0])
        np.testing.assert_allclose(moved, [E, 0.0], atol=1e-6)
        self.assertAlmostEqual(riemannian_norm(self.plane, [0.0, E], moved), 1.0, places=6)
        same = parallel_transport(self.plane, [0.3, 1.2], [0.3, 1.2], np.eye(2))
        np.testing.assert_allclose(same, np.eye(2))
        flat = parallel_transport(flat_chart(2), [0.0, 0.0], [1.0, 1.0], [2.0, 3.0])
        np.testing.assert_allclose(flat, [2.0, 3.0])

    def test_transport_preserves_inner_products(self):
        z = np.array([[1.0, 0.3], [0.5, -1.0]])
        x, y = [0.1, 0.9], [-0.6, 1.7]
        moved = parallel_transport(self.plane, x, y, z)
        before = z.T @ self.plane.metric(np.array(x)) @ z
        after = moved.T @ self.plane.metric(np.array(y)) @ moved
        np.testing.assert_allclose(after, before, atol=1e-7)

    def test_manifold_hessian(self):
        # Hess of (1/2) delta^2 from a point is the metric at that point
        center = np.array([0.0, 1.0])

        def half_squared(points):
            return 0.5 * distance_batch(self.plane, points, center) ** 2

        hess = manifold_hessian(self.plane, half_squared, [0.0, 1.0 + 1e-3])
        np.testing.assert_allclose(hess, self.plane.metric(center), atol=5e-3)
        flat = manifold_hessian(flat_chart(2), lambda p: p[:, 0] ** 2 + p[:, 1] ** 2, [0.2, 0.1])
        np.testing.assert_allclose(flat, 2.0 * np.eye(2), atol=1e-5)

    def test_norm_equivalence(self):
        self.assertAlmostEqual(norm_equivalence_constant(flat_chart(2)), 1.0)
        box = np.array([[-1.0, 1.0], [0.5, 2.0]])
        self.assertLessEqual(norm_equivalence_constant(self.plane, box=box), 2.0 + 1e-9)


if __name__ == "__main__":
    unittest.main()
