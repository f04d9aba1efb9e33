import unittest

import numpy as np

from manifold_bsde.drift import constant_drift
from manifold_bsde.forward import constant_diffusion
from manifold_bsde.geometry import flat_chart
from manifold_bsde.pdesolver import (
    SEMI_IMPLICIT,
    GridParams,
    ZField,
    choose_epsilon,
    gradient_field,
    grid_lipschitz,
    mesh_points,
    operator_matrix,
    solve_parabolic,
    working_window,
    z_bound_report,
)
from manifold_bsde.utilities.errors import BlowUpError, ConfigError, ExtrapolationError, ParameterError

from .dummy_fixtures import brownian, line_grid, unconstrained_gamma


def identity_terminal(points):
    return points[..., :1]


def square_terminal(points):
    return points[..., :1] ** 2


def sine_terminal(points):
    return np.sin(points[..., :1])


class TestGrid(unittest.TestCase):
    def test_time_step_divides_horizon(self):
        grid = GridParams(np.array([[0.0, 1.0]]), 0.1, 0.3, 1.0)
        self.assertEqual(grid.steps, 4)
        self.assertAlmostEqual(grid.dt, 0.25)
        self.assertEqual(len(grid.axes[0]), 11)

    def test_refined(self):
        finer = GridParams(np.array([[0.0, 1.0]]), 0.1, 0.25, 1.0).refined()
        self.assertAlmostEqual(finer.dx, 0.05)
        self.assertAlmostEqual(finer.dt, 0.0625)
        self.assertEqual(finer.steps, 16)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            GridParams(np.array([[0.0, 0.1]]), 0.1, 0.01, 1.0)
        with self.assertRaises(ParameterError):
            GridParams(np.array([[0.0, 1.0]]), -0.1, 0.01, 1.0)

    def test_working_window(self):
        np.testing.assert_allclose(working_window([[0.0, 1.0]], 1.0, 0.5), [[-2.0, 3.0]])

    def test_operator(self):
        axes = [np.linspace(-1.0, 1.0, 21)]
        operator = operator_matrix(brownian(), axes, 0.1)
        np.testing.assert_allclose(operator @ np.ones(21), 0.0, atol=1e-12)
        second = operator @ (axes[0] ** 2)
        np.testing.assert_allclose(second[1:-1], 1.0, atol=1e-10)
        drifted = operator_matrix(brownian(drift=2.0), axes, 0.1) @ axes[0]
        np.testing.assert_allclose(drifted[1:-1], 2.0, atol=1e-10)


class TestSolver(unittest.TestCase):
    def setUp(self):
        self.spec = brownian()
        self.grid = line_grid(half_width=5.0)
        self.interior = np.linspace(-1.0, 1.0, 9)[:, None]

    def test_linear_with_constant_drift(self):
        gamma = unconstrained_gamma(flat_chart(1), constant_drift([0.3]))
        field = solve_parabolic(self.spec, gamma, identity_terminal, 0.5, self.grid)
        values = field.interpolate(0.5, self.interior)
        np.testing.assert_allclose(values[:, 0], self.interior[:, 0] - 0.15, atol=1e-4)
        self.assertAlmostEqual(field.horizon, 0.5)
        self.assertEqual(field.epsilon, 0.5)

    def test_heat(self):
        gamma = unconstrained_gamma(flat_chart(1))
        field = solve_parabolic(self.spec, gamma, square_terminal, 0.5, self.grid)
        for tau in (0.0, 0.25, 0.5):
            values = field.interpolate(tau, self.interior)
            np.testing.assert_allclose(values[:, 0], self.interior[:, 0] ** 2 + tau, atol=2e-3)

    def test_schemes_agree(self):
        gamma = unconstrained_gamma(flat_chart(1))
        explicit = solve_parabolic(self.spec, gamma, sine_terminal, 0.5, self.grid)
        implicit = solve_parabolic(self.spec, gamma, sine_terminal, 0.5, self.grid, SEMI_IMPLICIT)
        expected = np.exp(-0.25) * np.sin(self.interior[:, 0])
        np.testing.assert_allclose(explicit.interpolate(0.5, self.interior)[:, 0], expected, atol=1e-3)
        np.testing.assert_allclose(implicit.interpolate(0.5, self.interior)[:, 0], expected, atol=2e-3)
        self.assertEqual(implicit.scheme, SEMI_IMPLICIT)

    def test_plane(self):
        spec = brownian(2)
        grid = GridParams(np.array([[-3.0, 3.0], [-3.0, 3.0]]), 0.1, 0.004, 0.2)

        def bowl(points):
            return np.sum(points ** 2, axis=-1, keepdims=True)

        field = solve_parabolic(spec, unconstrained_gamma(flat_chart(1)), bowl, 0.2, grid)
        points = np.array([[0.0, 0.0], [0.3, -0.4], [-0.5, 0.5]])
        np.testing.assert_allclose(field.interpolate(0.2, points)[:, 0], bowl(points)[:, 0] + 0.4, atol=1e-3)

    def test_cfl(self):
        gamma = unconstrained_gamma(flat_chart(1))
        coarse = line_grid(dt=2e-3)
        with self.assertRaises(ConfigError):
            solve_parabolic(self.spec, gamma, sine_terminal, 0.5, coarse)
        field = solve_parabolic(self.spec, gamma, sine_terminal, 0.5, coarse, SEMI_IMPLICIT)
        self.assertGreater(field.cfl_ratio, 0.4)

    def test_unknown_scheme(self):
        with self.assertRaises(ConfigError):
            solve_parabolic(self.spec, unconstrained_gamma(flat_chart(1)), sine_terminal, 0.5, self.grid, "crank")

    def test_blow_up(self):
        def explosive(points, u, z):
            return 1e4 * u ** 2

        with np.errstate(all="ignore"):
            with self.assertRaises(BlowUpError):
                solve_parabolic(self.spec, explosive, lambda p: np.ones_like(p[..., :1]), 0.5, line_grid())

    def test_extrapolation(self):
        field = solve_parabolic(self.spec, unconstrained_gamma(flat_chart(1)), sine_terminal, 0.1, line_grid())
        with self.assertRaises(ExtrapolationError):
            field.interpolate(0.05, np.array([[4.0]]))

    def test_exports(self):
        field = solve_parabolic(self.spec, unconstrained_gamma(flat_chart(1)), sine_terminal, 0.1, line_grid())
        columns, rows = field.long_table()
        self.assertEqual(columns, ["t", "x1", "u1"])
        self.assertEqual(rows.shape, (len(field.times) * 121, 3))
        summary = field.summary()
        self.assertEqual(summary["levels"], len(field.times))
        self.assertLessEqual(summary["cfl_ratio"], 0.4)


class TestGradientBound(unittest.TestCase):
    def setUp(self):
        axes = [np.linspace(0.0, 1.0, 3)]
        values = np.zeros((2, 3, 1, 1))
        values[1, 2, 0, 0] = 3.0
        self.zfield = ZField(axes, np.array([0.0, 0.5]), values)

    def test_violation(self):
        report = z_bound_report(self.zfield, 0.5)
        self.assertFalse(report.passed)
        self.assertEqual(report.max_norm, 3.0)
        self.assertEqual(report.location, [0.5, 1.0])
        self.assertAlmostEqual(report.margin, -0.5)

    def test_tight_and_loose(self):
        self.assertTrue(z_bound_report(self.zfield, 0.33).tight)
        loose = z_bound_report(self.zfield, 0.1)
        self.assertTrue(loose.passed)
        self.assertFalse(loose.tight)

    def test_gradient_of_solution(self):
        field = solve_parabolic(brownian(), unconstrained_gamma(flat_chart(1)), identity_terminal, 0.5,
                                line_grid(half_width=5.0))
        zfield = gradient_field(field, brownian())
        self.assertEqual(zfield.values.shape[1:], (201, 1, 1))
        middle = zfield.interpolate(0.5, np.array([[0.0]]))
        self.assertAlmostEqual(float(middle[0, 0, 0]), 1.0, places=6)
        self.assertLessEqual(z_bound_report(zfield, 0.5).max_norm, 1.0 + 1e-9)


class TestEpsilon(unittest.TestCase):
    def test_choose(self):
        certificate = choose_epsilon(1.0, 1.0, 1.0, 0.0)
        self.assertAlmostEqual(certificate.bound, np.sqrt(2.0))
        self.assertAlmostEqual(certificate.epsilon, 0.9 / np.sqrt(2.0))
        self.assertTrue(certificate.passed)
        self.assertEqual(certificate.to_dict()["horizon"], 0.0)

    def test_cap(self):
        self.assertEqual(choose_epsilon(0.0, 1.0, 1.0, 1.0).epsilon, 0.99)
        self.assertEqual(choose_epsilon(0.1, 1.0, 1.0, 0.0).epsilon, 0.99)
        with self.assertRaises(ParameterError):
            choose_epsilon(-1.0, 1.0, 1.0, 1.0)

    def test_grid_lipschitz(self):
        axes = [np.linspace(-1.0, 1.0, 11), np.linspace(0.0, 1.0, 6)]
        self.assertAlmostEqual(grid_lipschitz(lambda p: 2.0 * p[..., :1], axes), 2.0)
        self.assertEqual(mesh_points(axes).shape, (11, 6, 2))

    def test_flow_constant_for_drifted_brownian_motion(self):
        # translation-invariant flows have C = 1, so eps depends only on L_F and sigma
        spec = constant_diffusion(1, 0.4, 2.0)
        certificate = choose_epsilon(0.5, spec.dispersion_bound(), 1.0, 0.0)
        self.assertAlmostEqual(certificate.bound, np.sqrt(2.0))


if __name__ == "__main__":
    unittest.main()
