import json
import os
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from manifold_bsde.settings import list_setting, numeric, run_setting
from manifold_bsde.utilities.errors import (
    BlowUpError,
    ConfigError,
    DomainError,
    EscapeError,
    ManifoldBSDEError,
    NumericError,
    StageError,
)
from manifold_bsde.utilities.expressions import (
    MatrixExpression,
    VectorExpression,
    check_expression,
    coordinate_variables,
    matrix_variables,
)
from manifold_bsde.utilities.reports import VerificationReport, worst
from manifold_bsde.utilities.utils import (
    batched_gradient,
    batched_hessian,
    config_hash,
    file_digest,
    smootherstep,
    str2list,
    write_frame,
    write_json,
)

from .dummy_fixtures import ScratchDirectoryCase


class TestFunctions(unittest.TestCase):
    def setUp(self):
        pass

    def test_str_conversion(self):
        self.assertEqual(str2list("[1, 2, 3]", int), [1, 2, 3])

    def test_smootherstep(self):
        self.assertEqual(smootherstep(0.0), 0.0)
        self.assertEqual(smootherstep(1.0), 1.0)
        self.assertAlmostEqual(smootherstep(0.5), 0.5)
        self.assertEqual(smootherstep(-3.0), 0.0)
        self.assertEqual(smootherstep(7.0), 1.0)

    @given(st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.0, max_value=1.0))
    def test_smootherstep_monotone(self, u, v):
        low, high = min(u, v), max(u, v)
        self.assertLessEqual(smootherstep(low), smootherstep(high) + 1e-15)

    def test_finite_differences(self):
        points = np.array([[0.0, 0.0], [1.0, -2.0], [0.3, 0.7]])

        def quadratic(x):
            return x[:, 0] ** 2 + 3.0 * x[:, 0] * x[:, 1]

        gradient = batched_gradient(quadratic, points, 1e-5)
        expected = np.column_stack([2 * points[:, 0] + 3 * points[:, 1], 3 * points[:, 0]])
        np.testing.assert_allclose(gradient, expected, atol=1e-6)
        hessian = batched_hessian(quadratic, points, 1e-4)
        np.testing.assert_allclose(hessian, np.broadcast_to([[2.0, 3.0], [3.0, 0.0]], (3, 2, 2)), atol=1e-4)

    def test_config_hash(self):
        first = {"a": 1, "b": [1.0, 2.0], "c": {"d": "x"}}
        second = {"c": {"d": "x"}, "b": np.array([1.0, 2.0]), "a": 1}
        self.assertEqual(config_hash(first), config_hash(second))
        self.assertNotEqual(config_hash(first), config_hash({**first, "a": 2}))


class TestReports(unittest.TestCase):
    def test_passed(self):
        self.assertTrue(VerificationReport("x", 10, 0.1, 1e-6).passed)
        self.assertTrue(VerificationReport("x", 10, -1e-7, 1e-6).passed)
        self.assertFalse(VerificationReport("x", 10, -1e-3, 1e-6).passed)

    def test_worst(self):
        margins = np.array([0.5, -0.2, 0.1])
        witnesses = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
        report = worst("sample", margins, witnesses, 1e-6, note="ok")
        self.assertEqual(report.sample_size, 3)
        self.assertEqual(report.margin, -0.2)
        self.assertEqual(report.witness, [2.0, 3.0])
        self.assertFalse(report.passed)
        self.assertEqual(report.to_dict()["details"], {"note": "ok"})

    def test_nan_margin_fails(self):
        witnesses = np.array([[0.0], [1.0], [2.0]])
        report = worst("nan", np.array([0.5, np.nan, 0.1]), witnesses, 1e-6)
        self.assertTrue(np.isnan(report.margin))
        self.assertEqual(report.witness, [1.0])
        self.assertFalse(report.passed)
        self.assertFalse(worst("all-nan", np.full(3, np.nan), witnesses, 1e-6).passed)

    def test_empty_sample(self):
        report = worst("empty", np.array([]), np.empty((0, 2)), 1e-6)
        self.assertEqual(report.sample_size, 0)
        self.assertTrue(report.passed)


class TestExpressions(unittest.TestCase):
    def test_unknown_names(self):
        self.assertEqual(check_expression("sin(x1) + 1e-3*x2", ["x1", "x2"]), "sin(x1) + 1e-3*x2")
        with self.assertRaises(ConfigError):
            check_expression("y1 + x1", ["x1"])
        with self.assertRaises(ConfigError):
            check_expression("  ", ["x1"])

    def test_vector_expression(self):
        points = np.array([[0.0, 1.0], [2.0, 3.0]])
        expression = VectorExpression(["x1 + x2", "2"], ["x1", "x2"])
        values = expression(coordinate_variables(points), points.shape[:-1])
        np.testing.assert_allclose(values, [[1.0, 2.0], [5.0, 2.0]])

    def test_matrix_variables(self):
        z = np.arange(6.0).reshape(1, 3, 2)
        variables = matrix_variables(z)
        self.assertEqual(sorted(variables), ["z11", "z12", "z21", "z22", "z31", "z32"])
        self.assertEqual(float(variables["z32"][0]), 5.0)

    def test_matrix_expression(self):
        table = MatrixExpression([["1/x2**2", "0"], ["0", "1/x2**2"]], 2)
        g = table(np.array([[0.0, 2.0]]))
        np.testing.assert_allclose(g[0], 0.25 * np.eye(2))
        with self.assertRaises(ConfigError):
            MatrixExpression([["1"]], 2)


class TestErrors(unittest.TestCase):
    def test_hierarchy(self):
        self.assertTrue(issubclass(ConfigError, ValueError))
        self.assertTrue(issubclass(EscapeError, DomainError))
        self.assertTrue(issubclass(BlowUpError, NumericError))
        error = EscapeError("left", 0.5, [1.0, 2.0])
        self.assertEqual(error.exit_time, 0.5)
        self.assertEqual(error.point, [1.0, 2.0])

    def test_stage_error(self):
        cause = ConfigError("bad")
        error = StageError("pde", cause)
        self.assertIsInstance(error, ManifoldBSDEError)
        self.assertEqual(error.stage, "pde")
        self.assertIs(error.cause, cause)
        self.assertIn("pde", str(error))


class TestExports(ScratchDirectoryCase):
    def test_frames_are_reproducible(self):
        rows = np.array([[0.0, 1.0 / 3.0], [1.0, np.pi]])
        first = write_frame(self.path("a.csv"), ["t", "u"], rows)
        second = write_frame(self.path("b.csv"), ["t", "u"], rows)
        self.assertEqual(file_digest(first), file_digest(second))
        with open(first, "r", encoding="utf-8") as handle:
            self.assertEqual(handle.readline().strip(), "t,u")

    def test_json_numpy(self):
        path = write_json(self.path("m.json"), {"value": np.float64(1.5), "array": np.arange(3), "ok": np.bool_(True)})
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        self.assertEqual(data, {"value": 1.5, "array": [0, 1, 2], "ok": True})
        self.assertTrue(os.path.isfile(path))


class TestSettings(unittest.TestCase):
    def test_ini_values(self):
        self.assertEqual(numeric("cfl_ratio", 0.0), 0.4)
        self.assertEqual(run_setting("output_dir", "elsewhere"), "runs")
        self.assertIsInstance(run_setting("seed", 0), int)
        self.assertEqual(list_setting("Verify", "contraction_etas"), [0.2, 0.1, 0.05])

    def test_fallbacks(self):
        self.assertEqual(numeric("no_such_key", 1.5), 1.5)
        self.assertEqual(list_setting("Verify", "no_such_key", fallback=[1.0]), [1.0])


if __name__ == "__main__":
    unittest.main()
