# -*- coding: utf-8 -*-
"""Built-in scenarios

Each entry has exactly the shape of a JSON experiment file, so ``solve flat-linear-drift`` and
``solve my_experiment.json`` go through the same loader. Sizes are chosen so every scenario finishes in well
under a minute on one core.
"""
import copy
from typing import Dict, List

from .utilities.errors import ConfigError

ALL_SOLVE_CHECKS = ["terminal", "domain-invariance", "outwardness", "lsmc", "reduction", "integrability",
                    "drift-submartingale", "transport", "hessian", "contraction", "mollifier"]

SCENARIOS: Dict[str, dict] = {
    # u = x - 0.3 t
    "flat-linear-drift": {
        "kind": "solve",
        "description": "flat target, constant drift 0.3, identity terminal function",
        "chart": {"metric": "flat", "dimension": 1},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "constant", "value": 0.3, "L": 0.0, "L2": 0.3},
        "terminal": {"components": ["b1"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 1000, "steps": 100},
        "verify": ["terminal", "lsmc", "contraction"],
    },
    # u = x^2 + t
    "flat-heat": {
        "kind": "solve",
        "description": "flat target, zero drift, quadratic terminal function",
        "chart": {"metric": "flat", "dimension": 1},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "zero"},
        "terminal": {"components": ["b1**2"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 1000, "steps": 100},
        "verify": ["terminal"],
    },
    # u = exp(-t/2) sin x
    "flat-sine": {
        "kind": "solve",
        "description": "flat target, zero drift, sine terminal function (convergence series)",
        "chart": {"metric": "flat", "dimension": 1},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "zero"},
        "terminal": {"components": ["sin(b1)"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 1000, "steps": 50},
        "verify": ["terminal", "lsmc"],
    },
    "ball-radial": {
        "kind": "solve",
        "description": "unit coordinate ball in the plane, radial drift pointing outward on the boundary",
        "chart": {"metric": "flat", "dimension": 2},
        "domain": {"chi": "squared-norm", "level": 1.0},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "radial", "coefficient": 1.0, "L": 1.0, "L2": 1.0},
        "terminal": {"components": ["0.8*cos(b1)", "0.8*sin(b1)"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 1000, "steps": 100},
        "verify": ["terminal", "domain-invariance", "outwardness", "integrability", "drift-submartingale",
                   "hessian"],
    },
    "ball-zero-drift": {
        "kind": "solve",
        "description": "unit coordinate ball in the plane without drift",
        "chart": {"metric": "flat", "dimension": 2},
        "domain": {"chi": "squared-norm", "level": 1.0},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "zero"},
        "terminal": {"components": ["0.8*cos(b1)", "0.8*sin(b1)"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 1000, "steps": 100},
        "verify": ["terminal", "domain-invariance", "outwardness"],
    },
    "half-plane-z-drift": {
        "kind": "solve",
        "description": "geodesic ball in the hyperbolic half-plane with a drift linear in z",
        "chart": {"metric": "half-plane"},
        "domain": {"ball": {"center": [0.0, 1.0], "radius": 0.5}},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "linear-in-z", "weights": [0.2], "L": 0.2, "L2": 0.2},
        "terminal": {"components": ["0.2*sin(b1)", "1 + 0.2*cos(b1)"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 1000, "steps": 100},
        "verify": ["terminal", "domain-invariance", "integrability", "transport", "hessian"],
    },
    "sphere-cap": {
        "kind": "solve",
        "description": "geodesic ball of radius 0.5 on the unit sphere (stereographic chart)",
        "chart": {"metric": "sphere-cap", "curvature": 1.0},
        "domain": {"ball": {"center": [0.0, 0.0], "radius": 0.5}},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "zero"},
        "terminal": {"components": ["0.15*sin(b1)", "0.15*cos(b1)"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 1000, "steps": 100},
        "verify": ["terminal", "domain-invariance", "integrability", "contraction"],
    },
    "exp-interval": {
        "kind": "solve",
        "description": "one-dimensional curved target g(x) = exp(2x), checked against its arclength reduction",
        "chart": {"metric": "exp-interval"},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "zero"},
        "terminal": {"components": ["0.5*sin(b1)"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 1000, "steps": 100},
        "verify": ["terminal", "reduction", "lsmc"],
    },
    # 1/eps = 2 sits below the gradient 3 of the affine solution
    "forced-epsilon-failure": {
        "kind": "solve",
        "description": "negative control for the Z-bound certificate",
        "chart": {"metric": "flat", "dimension": 1},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "constant", "value": 0.3},
        "terminal": {"components": ["3*b1"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "solver": {"epsilon": 0.5, "force": True},
        "paths": {"count": 200, "steps": 50},
        "verify": ["terminal"],
    },
    "empty-verification": {
        "kind": "solve",
        "description": "solver outputs only",
        "chart": {"metric": "flat", "dimension": 1},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "constant", "value": 0.3},
        "terminal": {"components": ["b1"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.05, "dt": 8e-4, "horizon": 0.5},
        "paths": {"count": 200, "steps": 50},
        "verify": [],
    },
    # kink of |x1| at the centre, smoothed at scale 1/l
    "flat-mollified": {
        "kind": "solve",
        "description": "unit interval target, outward drift with a kink, mollified at l = 25, 50 and 100",
        "chart": {"metric": "flat", "dimension": 1},
        "domain": {"chi": "squared-norm", "level": 1.0},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "expression", "components": ["2*x1 + abs(x1)"], "z_dependent": False},
        "terminal": {"components": ["0.9*sin(b1)"], "support": [[-1.0, 1.0]]},
        "grid": {"dx": 0.1, "dt": 0.002, "horizon": 0.2, "box": [[-3.0, 3.0]]},
        "paths": {"count": 200, "steps": 10},
        "verify": ["mollifier"],
    },
    # phi(x) = x
    "dirichlet-flat": {
        "kind": "dirichlet",
        "description": "affine harmonic map of (0, 1) into the line",
        "chart": {"metric": "flat", "dimension": 1},
        "domain": {"chi": "squared-norm", "center": [0.5], "level": 1.0},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "zero", "L": 0.0, "L2": 0.0},
        "dirichlet": {"box": [[0.0, 1.0]], "boundary": ["b1"], "x": [0.5], "paths": 10000, "t_max": 2.0,
                      "dt": 2.5e-3, "flow_dx": 0.05, "flow_horizon": 5.0},
        "verify": ["mc-agreement", "tension", "energy-descent", "small-drift"],
    },
    # phi(x) = (0, e^x) is a geodesic of the half-plane
    "dirichlet-half-plane": {
        "kind": "dirichlet",
        "description": "harmonic map of (0, 1) into the hyperbolic half-plane",
        "chart": {"metric": "half-plane"},
        "domain": {"chi": "distance-to-center", "center": [0.0, 1.65], "level": 0.36},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "zero"},
        "dirichlet": {"box": [[0.0, 1.0]], "boundary": ["0*b1", "exp(b1)"], "x": [0.5], "paths": 4000,
                      "t_max": 2.0, "dt": 2.5e-3, "flow_dx": 0.02, "flow_horizon": 4.0},
        "verify": ["tension", "energy-descent", "mc-agreement"],
    },
    "dirichlet-energy": {
        "kind": "dirichlet",
        "description": "flow of a gradient drift f = D_2 G with G = |u|^2 / 2",
        "chart": {"metric": "flat", "dimension": 1},
        "domain": {"chi": "squared-norm", "center": [1.0], "level": 4.0},
        "diffusion": {"base_dimension": 1},
        "drift": {"form": "gradient", "potential": "half-squared-norm", "coefficient": 1.0, "L": 1.0, "L2": 2.0},
        "dirichlet": {"box": [[0.0, 1.0]], "boundary": ["1 + b1"], "x": [0.5], "paths": 2000, "t_max": 2.0,
                      "dt": 2.5e-3, "flow_dx": 0.05, "flow_horizon": 5.0},
        "verify": ["tension", "energy-descent"],
    },
}


def scenario_names(kind: str = None) -> List[str]:
    return sorted(name for name, spec in SCENARIOS.items() if kind is None or spec["kind"] == kind)


def get_scenario(name: str) -> dict:
    """ A fresh copy of a registered scenario, with its name filled in. """
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario '{name}' (known: {', '.join(scenario_names())})")
    out = copy.deepcopy(SCENARIOS[name])
    out["name"] = name
    return out


# Sampling regions for the geometric inequality suites, well inside each built-in chart.
GEOMETRY_BOXES: Dict[str, List[List[float]]] = {
    "flat": [[-1.0, 1.0], [-1.0, 1.0]],
    "half-plane": [[-1.0, 1.0], [0.5, 2.0]],
    "sphere-cap": [[-0.4, 0.4], [-0.4, 0.4]],
    "exp-interval": [[-1.0, 1.0]],
}
