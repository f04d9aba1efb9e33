import json
import os
import unittest

from manifold_bsde import MANIFEST_NAME
from manifold_bsde.cli import (
    ExperimentConfig,
    geometry_config,
    load_manifests,
    main,
    refinement_orders,
    render_summary,
    report,
    terminal_function,
)
from manifold_bsde.scenarios import get_scenario, scenario_names
from manifold_bsde.utilities.errors import ConfigError

import numpy as np

from .dummy_fixtures import ScratchDirectoryCase


def read_manifest(directory):
    with open(os.path.join(directory, MANIFEST_NAME), "r", encoding="utf-8") as handle:
        return json.load(handle)


class TestConfig(ScratchDirectoryCase):
    def test_defaults(self):
        config = ExperimentConfig.from_dict({"terminal": {"components": ["b1"]}})
        self.assertEqual(config.kind, "solve")
        self.assertEqual(config.grid["dx"], 0.05)
        self.assertEqual(config.solver["epsilon"], "auto")
        self.assertIn("lsmc", config.verify)

    def test_rejects_unknown_keys(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"colour": "red"})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"grid": {"spacing": 0.1}})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"verify": ["tension"]})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"kind": "elliptic"})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"refine": -1})

    def test_load(self):
        path = self.path("mine.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump({"kind": "dirichlet", "dirichlet": {"x": [0.5]}}, handle)
        config = ExperimentConfig.load(path)
        self.assertEqual(config.name, "mine")
        self.assertEqual(config.dirichlet["x"], [0.5])
        self.assertEqual(ExperimentConfig.load("flat-heat").name, "flat-heat")
        broken = self.path("broken.json")
        with open(broken, "w", encoding="utf-8") as handle:
            handle.write("{")
        with self.assertRaises(ConfigError):
            ExperimentConfig.load(broken)
        with self.assertRaises(ConfigError):
            ExperimentConfig.load("no-such-scenario")

    def test_overrides(self):
        config = ExperimentConfig.load("flat-sine").with_overrides(seed=3, refine=1, out=self.directory,
                                                                   force_epsilon=0.2)
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.run_name, "flat-sine-refine1")
        self.assertEqual(config.solver["epsilon"], 0.2)
        self.assertTrue(config.solver["force"])
        self.assertEqual(config.output_dir, self.directory)

    def test_scenarios(self):
        for name in scenario_names():
            ExperimentConfig.from_dict(get_scenario(name))
        self.assertIn("dirichlet-flat", scenario_names("dirichlet"))
        self.assertNotIn("dirichlet-flat", scenario_names("solve"))

    def test_terminal_function(self):
        function = terminal_function(["b1**2", "b1 + 1"], 1, 2)
        np.testing.assert_allclose(function(np.array([[2.0]])), [[4.0, 3.0]])
        with self.assertRaises(ConfigError):
            terminal_function(["b1"], 1, 2)

    def test_geometry_config(self):
        config = geometry_config("half-plane", seed=4)
        self.assertEqual(config.kind, "geomtest")
        self.assertEqual(config.grid["box"], [[-1.0, 1.0], [0.5, 2.0]])
        self.assertEqual(config.seed, 4)
        with self.assertRaises(ConfigError):
            geometry_config("klein-bottle")


class TestReports(unittest.TestCase):
    def setUp(self):
        base = {"kind": "solve", "refine": 0, "passed": True, "certificates": {}, "checks": {}}
        self.manifests = [
            {**base, "scenario": "a", "config": {"name": "a"}, "results": {"residual": {"median": 4e-3}},
             "checks": {"terminal": {"passed": True, "margin": 0.5, "witness": None}}},
            {**base, "scenario": "a-refine1", "refine": 1, "config": {"name": "a"},
             "results": {"residual": {"median": 1e-3}},
             "checks": {"terminal": {"passed": False, "margin": -0.1, "witness": [1.0]}}, "passed": False},
            {**base, "scenario": "b", "config": {"name": "b"}, "results": {},
             "failure": {"stage": "pde", "error": "CFL", "type": "ConfigError"}, "passed": False},
        ]

    def test_families(self):
        summary = report(self.manifests)
        self.assertFalse(summary["passed"])
        terminal = summary["families"]["terminal"]
        self.assertEqual((terminal["passed"], terminal["failed"]), (1, 1))
        self.assertEqual(terminal["rows"][0]["scenario"], "a-refine1")
        self.assertEqual(terminal["worst_margin"], -0.1)
        self.assertEqual(summary["families"]["stage"]["failed"], 1)

    def test_refinement_order(self):
        orders = refinement_orders(self.manifests)
        self.assertEqual(list(orders), ["a"])
        self.assertAlmostEqual(orders["a"][1]["observed_order"], 2.0)
        self.assertIsNone(orders["a"][0]["observed_order"])

    def test_render(self):
        text = render_summary(report(self.manifests))
        self.assertIn("overall FAIL", text)
        self.assertIn("witness [1.0]", text)
        self.assertIn("order 2.000", text)


class TestMain(ScratchDirectoryCase):
    def test_solve_only(self):
        self.assertEqual(main(["solve", "empty-verification", "--out", self.directory]), 0)
        manifest = read_manifest(self.path("empty-verification"))
        self.assertTrue(manifest["passed"])
        self.assertEqual(manifest["checks"], {})
        self.assertTrue(manifest["certificates"]["z_bound"]["passed"])
        self.assertLess(manifest["results"]["residual"]["median"], 1e-2)
        self.assertEqual(sorted(f["path"] for f in manifest["files"]), ["field.csv", "paths.csv", "residuals.csv"])

    def test_reproducible_outputs(self):
        first, second, third = self.path("one"), self.path("two"), self.path("three")
        main(["solve", "empty-verification", "--out", first, "--seed", "9"])
        main(["solve", "empty-verification", "--out", second, "--seed", "9"])
        main(["solve", "empty-verification", "--out", third, "--seed", "10"])
        digests = [{f["path"]: f["sha256"] for f in read_manifest(os.path.join(d, "empty-verification"))["files"]}
                   for d in (first, second, third)]
        self.assertEqual(digests[0], digests[1])
        self.assertNotEqual(digests[0]["paths.csv"], digests[2]["paths.csv"])
        self.assertEqual(digests[0]["field.csv"], digests[2]["field.csv"])

    def test_forced_epsilon_failure(self):
        self.assertEqual(main(["verify", "forced-epsilon-failure", "--out", self.directory]), 1)
        manifest = read_manifest(self.path("forced-epsilon-failure"))
        self.assertTrue(manifest["report_only"])
        self.assertFalse(manifest["certificates"]["z_bound"]["passed"])
        self.assertFalse(manifest["certificates"]["epsilon"]["passed"])
        self.assertIsNone(manifest["failure"])

    def test_mollified_scenario(self):
        self.assertEqual(main(["verify", "flat-mollified", "--out", self.directory]), 0)
        manifest = read_manifest(self.path("flat-mollified"))
        check = manifest["checks"]["mollifier"]
        self.assertTrue(check["passed"])
        self.assertEqual(check["details"]["levels"], [25, 50, 100])
        self.assertGreater(check["details"]["distances"][0], check["details"]["distances"][1])
        self.assertIn("mollifier.csv", [f["path"] for f in manifest["files"]])

    def test_wrong_kind(self):
        self.assertEqual(main(["solve", "dirichlet-flat", "--out", self.directory]), 1)

    def test_stage_failure(self):
        path = self.path("steep.json")
        experiment = get_scenario("flat-heat")
        experiment.pop("name")
        experiment["grid"]["dt"] = 0.01
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(experiment, handle)
        self.assertEqual(main(["solve", path, "--out", self.directory]), 1)
        manifest = read_manifest(self.path("steep"))
        self.assertEqual(manifest["failure"]["stage"], "pde")
        self.assertEqual(manifest["failure"]["type"], "ConfigError")

    def test_geomtest_and_report(self):
        self.assertEqual(main(["geomtest", "flat", "--out", self.directory]), 0)
        self.assertEqual(len(load_manifests(self.directory)), 1)
        self.assertEqual(main(["report", self.directory]), 0)
        self.assertTrue(os.path.isfile(self.path("report.json")))
        with open(self.path("summary.txt"), "r", encoding="utf-8") as handle:
            self.assertIn("overall PASS", handle.read())

    def test_empty_report(self):
        self.assertEqual(main(["report", self.directory]), 1)


if __name__ == "__main__":
    unittest.main()
