import unittest

import numpy as np

from manifold_bsde.convexity import coordinate_ball
from manifold_bsde.dirichlet import (
    DirichletProblem,
    exit_rho_estimate,
    energy,
    harmonic_map_flow,
    initial_guess,
    solve_dirichlet_mc,
    tension_residual,
)
from manifold_bsde.drift import constant_drift, zero_drift
from manifold_bsde.forward import constant_diffusion, linear_diffusion
from manifold_bsde.geometry import flat_chart
from manifold_bsde.utilities.errors import ConfigError, DomainError, HorizonError

from .dummy_fixtures import E, brownian, half_plane, unconstrained_gamma


def unit_interval_problem(boundary_map=None, drift=None):
    line = flat_chart(1)
    return DirichletProblem(
        box=np.array([[0.0, 1.0]]),
        spec=brownian(),
        boundary_map=boundary_map or (lambda points: points[..., :1]),
        chart=line,
        domain=coordinate_ball(line, [0.5], 1.0),
        drift=drift or zero_drift(1),
    )


class TestExitRate(unittest.TestCase):
    def test_unit_interval(self):
        rate = exit_rho_estimate([[0.0, 1.0]], brownian())
        self.assertEqual(rate.method, "closed-form")
        self.assertAlmostEqual(rate.eigenvalue, np.pi ** 2 / 2.0)
        self.assertAlmostEqual(rate.safe, 4.4413, places=4)

    def test_scaling(self):
        unit = exit_rho_estimate([[0.0, 1.0]], brownian()).eigenvalue
        self.assertAlmostEqual(exit_rho_estimate([[0.0, 2.0]], brownian()).eigenvalue, unit / 4.0)
        self.assertAlmostEqual(exit_rho_estimate([[0.0, 1.0]], brownian(dispersion=2.0)).eigenvalue, 4.0 * unit)
        square = exit_rho_estimate([[0.0, 1.0], [0.0, 1.0]], brownian(2)).eigenvalue
        self.assertAlmostEqual(square, 2.0 * unit)
        drifted = exit_rho_estimate([[0.0, 1.0]], brownian(drift=1.0)).eigenvalue
        self.assertAlmostEqual(drifted, unit + 0.5)

    def test_finite_difference(self):
        # same coefficients, but declared state dependent
        rate = exit_rho_estimate([[0.0, 1.0]], linear_diffusion([[0.0]], 0.0, 1.0))
        self.assertEqual(rate.method, "finite-difference")
        self.assertAlmostEqual(rate.eigenvalue, np.pi ** 2 / 2.0, delta=0.02)

    def test_degenerate(self):
        with self.assertRaises(ConfigError):
            exit_rho_estimate([[0.0, 1.0]], constant_diffusion(1, 0.0, 0.0))


class TestProblem(unittest.TestCase):
    def test_boundary_outside_domain(self):
        with self.assertRaises(DomainError):
            unit_interval_problem(lambda points: 5.0 * points[..., :1])

    def test_box_checks(self):
        line = flat_chart(1)
        with self.assertRaises(ConfigError):
            DirichletProblem(np.array([[0.0, 1.0], [0.0, 1.0]]), brownian(), lambda p: p[..., :1], line,
                             coordinate_ball(line, [0.5], 1.0), zero_drift(1))
        with self.assertRaises(ConfigError):
            DirichletProblem(np.array([[1.0, 0.0]]), brownian(), lambda p: p[..., :1], line,
                             coordinate_ball(line, [0.5], 1.0), zero_drift(1))

    def test_on_boundary(self):
        problem = unit_interval_problem()
        self.assertTrue(problem.on_boundary(np.array([1.0])))
        self.assertFalse(problem.on_boundary(np.array([1.5])))
        self.assertFalse(problem.contains(np.array([1.5])))
        self.assertTrue(problem.contains(np.array([1.0 + 1e-12])))
        self.assertFalse(problem.on_boundary(np.array([0.3])))


class TestMonteCarlo(unittest.TestCase):
    def test_harmonic_identity(self):
        estimate = solve_dirichlet_mc(unit_interval_problem(), [0.5], path_count=4000, seed=1)
        self.assertLess(abs(float(estimate.value[0]) - 0.5), 4.0 * estimate.standard_error)
        self.assertLess(estimate.censored_fraction, 1e-3)
        self.assertAlmostEqual(estimate.mean_exit_time, 0.25, delta=0.05)

    def test_constant_drift(self):
        # 1/2 phi'' = c with phi(0) = 0, phi(1) = 1 gives phi(x) = x - c x (1 - x)
        drift = constant_drift([0.4])
        problem = unit_interval_problem(drift=drift)
        gamma = unconstrained_gamma(flat_chart(1), drift)
        estimate = solve_dirichlet_mc(problem, [0.5], path_count=2000, dt=5e-4, gamma=gamma, seed=4)
        # discrete monitoring lengthens exit times by roughly 0.58 sqrt(dt) on each side
        self.assertLess(abs(float(estimate.value[0]) - 0.4), 4.0 * estimate.standard_error + 0.01)

    def test_start_on_boundary(self):
        estimate = solve_dirichlet_mc(unit_interval_problem(), [0.0])
        np.testing.assert_array_equal(estimate.value, [0.0])
        self.assertEqual(estimate.path_count, 0)

    def test_start_outside_box(self):
        for start in ([1.5], [-0.2]):
            with self.assertRaises(DomainError):
                solve_dirichlet_mc(unit_interval_problem(), start, path_count=10)

    def test_short_horizon(self):
        with self.assertRaises(HorizonError):
            solve_dirichlet_mc(unit_interval_problem(), [0.5], path_count=200, t_max=0.05)


class TestFlow(unittest.TestCase):
    def test_geodesic_in_half_plane(self):
        plane = half_plane()

        def ends(points):
            return np.stack([np.zeros(points.shape[:-1]), np.exp(points[..., 0])], axis=-1)

        problem = DirichletProblem(np.array([[0.0, 1.0]]), brownian(), ends, plane,
                                   coordinate_ball(plane, [0.0, 1.9], 1.0), zero_drift(2))
        result = harmonic_map_flow(problem, 0.025, 5.0)
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.values, ends(result.axes[0][:, None]), atol=1e-3)
        np.testing.assert_allclose(result.evaluate([0.5]), [0.0, np.exp(0.5)], atol=1e-3)
        self.assertLess(float(np.max(tension_residual(result.values, result.axes, brownian(), plane, zero_drift(2)))),
                        1e-3)
        self.assertLessEqual(float(np.max(result.chi_max)), 1.0)
        self.assertLess(result.energies[-1], result.energies[0])
        self.assertAlmostEqual(float(result.values[-1, 1]), E)

    def test_affine_energy(self):
        axes = [np.linspace(0.0, 1.0, 11)]
        self.assertAlmostEqual(energy(axes[0][:, None], axes, brownian(), flat_chart(1)), 0.5)
        self.assertAlmostEqual(energy(3.0 * axes[0][:, None], axes, brownian(dispersion=2.0), flat_chart(1)), 18.0)

    def test_plane_map(self):
        line = flat_chart(1)
        problem = DirichletProblem(np.array([[0.0, 1.0], [0.0, 1.0]]), brownian(2),
                                   lambda points: points.sum(axis=-1, keepdims=True), line,
                                   coordinate_ball(line, [1.0], 2.0), zero_drift(1))
        axes = [np.linspace(0.0, 1.0, 6), np.linspace(0.0, 1.0, 6)]
        guess = initial_guess(problem, axes)
        np.testing.assert_allclose(guess[..., 0], axes[0][:, None] + axes[1][None, :], atol=1e-12)
        result = harmonic_map_flow(problem, 0.1, 1.0)
        self.assertTrue(result.converged)
        self.assertLess(result.steps, 20)
        columns, rows = result.grid_table()
        self.assertEqual(columns, ["x1", "x2", "phi1"])
        self.assertEqual(rows.shape, (121, 3))
        self.assertEqual(result.trace_table()[1].shape[1], 4)

    def test_step_too_large(self):
        with self.assertRaises(ConfigError):
            harmonic_map_flow(unit_interval_problem(), 0.05, 1.0, dt=0.01)

    def test_horizon_must_be_positive(self):
        for horizon in (0.0, -1.0):
            with self.assertRaises(ConfigError):
                harmonic_map_flow(unit_interval_problem(), 0.05, horizon)

    def test_horizon_shorter_than_one_step(self):
        result = harmonic_map_flow(unit_interval_problem(), 0.05, 1e-6)
        self.assertFalse(result.converged)
        self.assertEqual(result.steps, 1)
        self.assertEqual(len(result.updates), 1)


if __name__ == "__main__":
    unittest.main()
