import unittest

import numpy as np

from manifold_bsde.bsde import (
    LSMC,
    PDE_ASSEMBLED,
    RegressionBasis,
    assemble_solution,
    lsmc_solve,
    polynomial_exponents,
    reduce_1d,
    residual_check,
)
from manifold_bsde.drift import constant_drift
from manifold_bsde.forward import simulate_diffusion, uniform_grid
from manifold_bsde.geometry import exp_interval_chart, flat_chart, interval_chart
from manifold_bsde.pdesolver import gradient_field, solve_parabolic
from manifold_bsde.utilities.errors import BasisError, DimensionError, DomainError, MetricError, ParameterError

from .dummy_fixtures import E, brownian, half_plane, line_grid, unconstrained_gamma


def identity_terminal(points):
    return points[..., :1]


def square_terminal(points):
    return points[..., :1] ** 2


class TestAssembly(unittest.TestCase):
    def setUp(self):
        self.spec = brownian()
        self.drift = constant_drift([0.3])
        gamma = unconstrained_gamma(flat_chart(1), self.drift)
        self.field = solve_parabolic(self.spec, gamma, identity_terminal, 0.5, line_grid(half_width=5.0))
        self.paths = simulate_diffusion(self.spec, [0.0], uniform_grid(0.5, 25), seed=5, path_count=200)

    def test_values(self):
        solution = assemble_solution(self.field, self.paths, self.spec)
        self.assertEqual(solution.provenance, PDE_ASSEMBLED)
        self.assertEqual(solution.terminal_mismatch(), 0.0)
        np.testing.assert_allclose(solution.initial_value, [-0.15], atol=1e-4)
        np.testing.assert_allclose(solution.Z[:, :-1], 1.0, atol=1e-4)
        self.assertEqual(solution.summary()["paths"], 200)
        self.assertIs(solution.pde_field, self.field)
        self.assertEqual(solution.details, {})

    def test_residual(self):
        solution = assemble_solution(self.field, self.paths, self.spec)
        residual = residual_check(solution, flat_chart(1), self.drift)
        self.assertLess(residual.maximum, 1e-3)
        self.assertLessEqual(residual.median, residual.maximum)
        self.assertEqual(residual.to_dict()["paths"], 200)

    def test_residual_sees_a_wrong_drift(self):
        solution = assemble_solution(self.field, self.paths, self.spec)
        residual = residual_check(solution, flat_chart(1), constant_drift([1.3]))
        self.assertAlmostEqual(residual.median, 0.02, delta=1e-3)

    def test_precomputed_z(self):
        zfield = gradient_field(self.field, self.spec)
        solution = assemble_solution(self.field, self.paths, zfield=zfield)
        np.testing.assert_allclose(solution.X, assemble_solution(self.field, self.paths, self.spec).X)

    def test_mismatches(self):
        short = simulate_diffusion(self.spec, [0.0], uniform_grid(0.25, 10), seed=5, path_count=2)
        with self.assertRaises(ParameterError):
            assemble_solution(self.field, short, self.spec)
        with self.assertRaises(ParameterError):
            assemble_solution(self.field, self.paths)
        plane_paths = simulate_diffusion(brownian(2), [0.0, 0.0], uniform_grid(0.5, 5), seed=5)
        with self.assertRaises(DimensionError):
            assemble_solution(self.field, plane_paths, brownian(2))


class TestRegression(unittest.TestCase):
    def test_exponents(self):
        self.assertEqual(len(polynomial_exponents(1, 3)), 4)
        self.assertEqual(len(polynomial_exponents(2, 2)), 6)
        self.assertIn((1, 1), polynomial_exponents(2, 2))

    def test_degenerate_slice(self):
        basis = RegressionBasis(np.full((50, 1), 0.3), 2)
        self.assertTrue(basis.degenerate)
        fitted = basis.project(np.arange(50.0))
        np.testing.assert_allclose(fitted[:, 0], 24.5)

    def test_constant_column_is_dropped(self):
        points = np.column_stack([np.linspace(-1.0, 1.0, 40), np.full(40, 0.7)])
        basis = RegressionBasis(points, 2)
        self.assertFalse(basis.degenerate)
        self.assertEqual(len(basis.exponents), 3)
        np.testing.assert_allclose(basis.project(points[:, 0] ** 2)[:, 0], points[:, 0] ** 2, atol=1e-10)

    def test_exact_for_polynomials(self):
        points = np.linspace(-1.0, 1.0, 40)[:, None]
        basis = RegressionBasis(points, 2)
        target = np.column_stack([1.0 + points[:, 0] ** 2, np.full(40, 7.0)])
        np.testing.assert_allclose(basis.project(target), target, atol=1e-10)

    def test_rank_deficient(self):
        points = np.repeat([[0.0], [1.0]], 10, axis=0)
        with self.assertRaises(BasisError):
            RegressionBasis(points, 2)


class TestLeastSquaresMonteCarlo(unittest.TestCase):
    def test_against_finite_differences(self):
        spec = brownian()
        gamma = unconstrained_gamma(flat_chart(1), constant_drift([0.3]))
        solution = lsmc_solve(spec, gamma, square_terminal, [0.0], uniform_grid(0.5, 20), 4000, seed=3)
        field = solve_parabolic(spec, gamma, square_terminal, 0.5, line_grid(half_width=5.0))
        reference = float(field.interpolate(0.5, np.array([[0.0]]))[0, 0])
        self.assertAlmostEqual(reference, 0.35, delta=2e-3)
        self.assertEqual(solution.provenance, LSMC)
        self.assertLess(abs(float(solution.initial_value[0]) - reference), 4.0 * solution.standard_error + 2e-3)
        self.assertEqual(solution.X.shape, (4000, 21, 1))
        self.assertEqual(solution.Z.shape, (4000, 21, 1, 1))

    def test_shifted_start(self):
        # E[(0.3 + B_T)^2] = 0.09 + T
        gamma = unconstrained_gamma(flat_chart(1))
        solution = lsmc_solve(brownian(), gamma, square_terminal, [0.3], uniform_grid(0.2, 5), 2000, seed=8)
        self.assertLess(abs(float(solution.initial_value[0]) - 0.29), 4.0 * solution.standard_error + 2e-3)
        self.assertEqual(solution.Z.shape, (2000, 6, 1, 1))

    def test_seed(self):
        spec = brownian()
        gamma = unconstrained_gamma(flat_chart(1))
        first = lsmc_solve(spec, gamma, square_terminal, [0.0], uniform_grid(0.2, 5), 100, seed=8)
        second = lsmc_solve(spec, gamma, square_terminal, [0.0], uniform_grid(0.2, 5), 100, seed=8)
        np.testing.assert_array_equal(first.X, second.X)


class TestReduction(unittest.TestCase):
    def setUp(self):
        self.reduction = reduce_1d(exp_interval_chart(), constant_drift([1.0]))

    def test_arclength(self):
        x = np.array([-1.0, 0.0, 0.5, 1.0])
        np.testing.assert_allclose(self.reduction.arclength(x), np.exp(x) - 1.0, atol=1e-9)
        np.testing.assert_allclose(self.reduction.inverse(np.exp(x) - 1.0), x, atol=1e-9)
        with self.assertRaises(DomainError):
            self.reduction.arclength(np.array([4.0]))

    def test_flat_target(self):
        flat = self.reduction.flat
        self.assertTrue(flat.is_flat)
        np.testing.assert_allclose(flat.bounds[0], [np.exp(-3.0) - 1.0, np.exp(3.0) - 1.0], atol=1e-8)

    def test_transported_drift(self):
        value = self.reduction.drift(np.zeros((1, 1)), np.array([[E - 1.0]]), np.zeros((1, 1, 1)))
        np.testing.assert_allclose(value, [[E]], atol=1e-8)

    def test_terminal_and_map_back(self):
        terminal = self.reduction.transform_terminal(identity_terminal)
        s = terminal(np.array([[1.0], [0.0]]))
        np.testing.assert_allclose(s[:, 0], [E - 1.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(self.reduction.map_back(s)[:, 0], [1.0, 0.0], atol=1e-9)

    def test_invalid(self):
        with self.assertRaises(DimensionError):
            reduce_1d(half_plane())
        with self.assertRaises(MetricError):
            reduce_1d(interval_chart(lambda x: -np.ones(np.shape(x)), (0.0, 1.0)))


if __name__ == "__main__":
    unittest.main()
