# -*- coding: utf-8 -*-
"""Command line front end

Loads an experiment (a JSON file or the name of a built-in scenario), runs it stage by stage and persists CSV
tables plus a JSON manifest into one run directory per scenario and refinement level.

Notes
-----
A failing stage is wrapped in ``StageError``; the run stops there, the manifest records the stage and everything
already written stays on disk. Failed checks do not stop a run: they are recorded and turn the exit code to 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import DEBUGGING, LOGFILE, LOGGER_NAME, MANIFEST_NAME
from . import verify
from ._constants import BUILD_DATE, VERSION
from .bsde import BSDESolution, assemble_solution, lsmc_solve, reduce_1d, residual_check
from .convexity import ConvexDomain, alpha_for_ball, load_domain
from .dirichlet import DirichletProblem, energy, exit_rho_estimate, harmonic_map_flow, solve_dirichlet_mc, \
    tension_residual
from .drift import DriftField, GammaDrift, TruncationParams, gamma_assemble, load_drift
from .forward import DiffusionSpec, estimate_flow_continuity, load_diffusion, simulate_diffusion, uniform_grid
from .geometry import ManifoldChart, check_metric, distance_batch, load_chart, sample_box
from .geometry.charts import BUILTIN_CHARTS
from .pdesolver import EXPLICIT, EpsilonCertificate, GridParams, SpaceTimeField, choose_epsilon, gradient_field, \
    grid_lipschitz, solve_parabolic, working_window, z_bound_report
from .scenarios import ALL_SOLVE_CHECKS, GEOMETRY_BOXES, get_scenario
from .settings import config as settings, list_setting, numeric, run_setting
from .utilities.errors import ConfigError, ManifoldBSDEError, PreconditionError, StageError
from .utilities.expressions import VectorExpression, coordinate_variables
from .utilities.reports import VerificationReport
from .utilities.utils import config_hash, file_digest, write_frame, write_json

logger = logging.getLogger(LOGGER_NAME + ".cli")

SOLVE, DIRICHLET, GEOMTEST = "solve", "dirichlet", "geomtest"
KINDS = (SOLVE, DIRICHLET, GEOMTEST)
DIRICHLET_CHECKS = ["mc-agreement", "tension", "energy-descent", "small-drift"]
GEOMETRY_CHECKS = ["metric", "hessian", "transport"]
KNOWN_CHECKS = {SOLVE: ALL_SOLVE_CHECKS, DIRICHLET: DIRICHLET_CHECKS, GEOMTEST: GEOMETRY_CHECKS}

TERMINAL_TOLERANCE = 1e-6
INVARIANCE_SLACK = 5e-3
AGREEMENT_FLOOR = 2e-2
TENSION_TOLERANCE = 1e-3
DESCENT_TOLERANCE = 1e-8
CONTRACTION_ETAS = tuple(list_setting("Verify", "contraction_etas", float, [0.2, 0.1, 0.05]))
HESSIAN_MIN_DISTANCE = 0.25

TOP_LEVEL_KEYS = {"name", "kind", "description", "chart", "domain", "diffusion", "drift", "terminal", "grid",
                  "solver", "paths", "lsmc", "dirichlet", "verify", "seed", "output_dir", "refine"}
SECTION_DEFAULTS = {
    "terminal": {"components": None, "support": None},
    "grid": {"dx": 0.05, "dt": None, "horizon": 1.0, "box": None},
    "solver": {"scheme": EXPLICIT, "epsilon": "auto", "force": False, "cutoff": True},
    "paths": {"count": None, "steps": 100, "start": None},
    "lsmc": {"paths": 10000, "degree": 2},
    "dirichlet": {"box": None, "boundary": None, "x": None, "paths": 10000, "t_max": 2.0, "dt": 2.5e-3,
                  "flow_dx": 0.05, "flow_horizon": 5.0, "epsilon": 0.1, "exit_rate": None},
}


# Configuration


@dataclass
class ExperimentConfig:
    """ One experiment with every default filled in, so the manifest can echo it verbatim. """

    name: str
    kind: str
    description: str
    chart: dict
    domain: Optional[dict]
    diffusion: dict
    drift: dict
    terminal: dict
    grid: dict
    solver: dict
    paths: dict
    lsmc: dict
    dirichlet: dict
    verify: List[str]
    seed: int
    output_dir: str
    refine: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown experiment keys {sorted(unknown)}")
        kind = data.get("kind", SOLVE)
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind '{kind}', expected one of {KINDS}")
        sections = {}
        for key, defaults in SECTION_DEFAULTS.items():
            given = data.get(key) or {}
            if not isinstance(given, dict):
                raise ConfigError(f"section '{key}' must be an object")
            extra = set(given) - set(defaults)
            if extra:
                raise ConfigError(f"unknown {key} keys {sorted(extra)}")
            sections[key] = {**defaults, **given}
        checks = list(data.get("verify", KNOWN_CHECKS[kind]))
        strange = set(checks) - set(KNOWN_CHECKS[kind])
        if strange:
            raise ConfigError(f"unknown checks {sorted(strange)} for a {kind} experiment")
        refine = int(data.get("refine", 0))
        if refine < 0:
            raise ConfigError("refine must be nonnegative")
        return cls(
            name=str(data.get("name", "experiment")),
            kind=kind,
            description=str(data.get("description", "")),
            chart=dict(data.get("chart", {"metric": "flat"})),
            domain=None if data.get("domain") is None else dict(data["domain"]),
            diffusion=dict(data.get("diffusion", {})),
            drift=dict(data.get("drift", {"form": "zero"})),
            verify=checks,
            seed=int(data.get("seed", run_setting("seed", 0))),
            output_dir=str(data.get("output_dir", run_setting("output_dir", "runs"))),
            refine=refine,
            **sections,
        )

    @classmethod
    def load(cls, source: str) -> "ExperimentConfig":
        """ A JSON file path, or else the name of a built-in scenario. """
        if os.path.isfile(source):
            with open(source, "r", encoding="utf-8") as handle:
                try:
                    data = json.load(handle)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{source} is not valid JSON: {exc}") from exc
            data.setdefault("name", os.path.splitext(os.path.basename(source))[0])
            return cls.from_dict(data)
        return cls.from_dict(get_scenario(source))

    def with_overrides(self, seed: Optional[int] = None, refine: Optional[int] = None, out: Optional[str] = None,
                       force_epsilon: Optional[float] = None) -> "ExperimentConfig":
        out_config = self
        if seed is not None:
            out_config = replace(out_config, seed=int(seed))
        if refine is not None:
            out_config = replace(out_config, refine=int(refine))
        if out is not None:
            out_config = replace(out_config, output_dir=out)
        if force_epsilon is not None:
            out_config = replace(out_config, solver={**out_config.solver, "epsilon": float(force_epsilon), "force": True})
        return out_config

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def run_name(self) -> str:
        return self.name if not self.refine else f"{self.name}-refine{self.refine}"


def geometry_config(source: str, seed: Optional[int] = None) -> ExperimentConfig:
    """ geomtest target: a built-in chart name or a JSON chart description. """
    if os.path.isfile(source):
        with open(source, "r", encoding="utf-8") as handle:
            chart = json.load(handle)
        name = os.path.splitext(os.path.basename(source))[0]
    elif source in BUILTIN_CHARTS:
        chart = {"metric": source}
        name = source
    else:
        raise ConfigError(f"'{source}' is neither a chart file nor a built-in chart ({', '.join(BUILTIN_CHARTS)})")
    box = GEOMETRY_BOXES.get(chart.get("metric")) if isinstance(chart.get("metric"), str) else None
    if box is not None and chart.get("metric") == "flat":
        box = box[: int(chart.get("dimension", 1))]
    data = {"name": f"geomtest-{name}", "kind": GEOMTEST, "chart": chart, "grid": {"box": box},
            "paths": {"count": 200}}
    if seed is not None:
        data["seed"] = seed
    return ExperimentConfig.from_dict(data)


def terminal_function(components: Sequence[str], base_dimension: int, target_dimension: int) -> Callable:
    """ F(b) from one expression per target coordinate, in the variables b1..bd. """
    if not components or len(components) != target_dimension:
        raise ConfigError(f"expected {target_dimension} terminal components, got {components!r}")
    expression = VectorExpression(components, [f"b{i + 1}" for i in range(base_dimension)])

    def function(points):
        points = np.asarray(points, dtype=float)
        return expression(coordinate_variables(points, "b"), points.shape[:-1])

    return function


# Manifest


@dataclass
class RunManifest:
    """ Everything one run produced, keyed so reruns can be compared field by field. """

    scenario: str
    kind: str
    config_hash: str
    version: str
    seed: int
    refine: int
    config: dict
    started: str = ""
    wall_clock: float = 0.0
    certificates: Dict[str, dict] = field(default_factory=dict)
    checks: Dict[str, dict] = field(default_factory=dict)
    results: Dict[str, dict] = field(default_factory=dict)
    files: List[Dict[str, str]] = field(default_factory=list)
    failure: Optional[Dict[str, str]] = None
    report_only: bool = False

    @property
    def passed(self) -> bool:
        if self.failure is not None:
            return False
        z_bound = self.certificates.get("z_bound")
        if z_bound is not None and not z_bound["passed"]:
            return False
        return all(check["passed"] for check in self.checks.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def write(self, directory: str) -> str:
        return write_json(os.path.join(directory, MANIFEST_NAME), self.to_dict())


class ScenarioRun:
    """ Stage bookkeeping for one run: error wrapping, file digests and check records. """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.directory = os.path.join(config.output_dir, config.run_name)
        os.makedirs(self.directory, exist_ok=True)
        self.logger = logging.getLogger(f"{LOGGER_NAME}.run({config.run_name})")
        self.manifest = RunManifest(config.run_name, config.kind, config_hash(config.to_dict()), VERSION, config.seed,
                                    config.refine, config.to_dict(), started=datetime.now().isoformat())

    def stage(self, name: str, func: Callable, *args, **kwargs):
        self.logger.info("Stage %s", name)
        try:
            return func(*args, **kwargs)
        except ManifoldBSDEError as exc:
            raise StageError(name, exc) from exc

    def emit(self, filename: str, table) -> str:
        columns, rows = table
        path = write_frame(os.path.join(self.directory, filename), columns, rows)
        self.manifest.files.append({"path": filename, "sha256": file_digest(path)})
        return path

    def record(self, report: VerificationReport) -> None:
        self.manifest.checks[report.name] = report.to_dict()
        level = logging.INFO if report.passed else logging.WARNING
        self.logger.log(level, "Check %s: margin %.3g (%s)", report.name, report.margin,
                        "pass" if report.passed else "FAIL")


def run_scenario(config: ExperimentConfig) -> RunManifest:
    """ Run one experiment end to end and write its manifest; stage failures are recorded, not raised. """
    run = ScenarioRun(config)
    start = time.perf_counter()
    try:
        if config.kind == SOLVE:
            _run_solve(run)
        elif config.kind == DIRICHLET:
            _run_dirichlet(run)
        else:
            _run_geomtest(run)
    except StageError as exc:
        logger.error("Scenario %s failed: %s", config.run_name, exc)
        run.manifest.failure = {"stage": exc.stage, "error": str(exc.cause), "type": type(exc.cause).__name__}
    run.manifest.wall_clock = time.perf_counter() - start
    run.manifest.write(run.directory)
    return run.manifest


# Solve pipeline


@dataclass
class SolveContext:
    """ What the verification stages of a solve run share. """

    config: ExperimentConfig
    chart: ManifoldChart
    domain: Optional[ConvexDomain]
    spec: DiffusionSpec
    drift: DriftField
    terminal: Callable
    grid: GridParams
    start: np.ndarray
    times: np.ndarray
    epsilon: float = float("nan")
    field: Optional[SpaceTimeField] = None
    solution: Optional[BSDESolution] = None

    def gamma_drift(self, chart: Optional[ManifoldChart] = None, drift: Optional[DriftField] = None,
                    cutoff: bool = True) -> GammaDrift:
        chart = self.chart if chart is None else chart
        drift = self.drift if drift is None else drift
        domain = self.domain if cutoff and self.config.solver["cutoff"] else None
        return gamma_assemble(chart, domain, drift, TruncationParams(self.epsilon))

    def solve(self, terminal: Callable, chart: Optional[ManifoldChart] = None, drift: Optional[DriftField] = None,
              cutoff: bool = True) -> SpaceTimeField:
        gamma = self.gamma_drift(chart, drift, cutoff)
        return solve_parabolic(self.spec, gamma, terminal, self.grid.horizon, self.grid, self.config.solver["scheme"])

    def require_domain(self, check: str) -> ConvexDomain:
        if self.domain is None:
            raise PreconditionError(f"check '{check}' needs a target domain")
        return self.domain


def build_context(config: ExperimentConfig) -> SolveContext:
    chart = load_chart(config.chart)
    domain = None if config.domain is None else load_domain(config.domain, chart)
    spec = load_diffusion(config.diffusion)
    d, n = spec.base_dimension, chart.dimension
    drift = load_drift(config.drift, n, d, spec.noise_dimension, chart)
    terminal = terminal_function(config.terminal["components"], d, n)
    grid_section = config.grid
    horizon = float(grid_section["horizon"])
    if grid_section["box"] is not None:
        box = np.asarray(grid_section["box"], dtype=float)
    else:
        support = config.terminal["support"] or [[-1.0, 1.0]] * d
        box = working_window(support, horizon, spec.dispersion_bound())
    dx = float(grid_section["dx"])
    dt = grid_section["dt"]
    if dt is None:
        if config.solver["scheme"] == EXPLICIT:
            dt = 0.9 * numeric("cfl_ratio", 0.4) * dx ** 2 / spec.diffusion_sup(box)
        else:
            dt = dx
    grid = GridParams(box, dx, float(dt), horizon)
    factor = 2 ** config.refine
    if config.refine:
        grid = grid.refined(factor)
    start = np.zeros(d) if config.paths["start"] is None else np.asarray(config.paths["start"], dtype=float)
    times = uniform_grid(horizon, int(config.paths["steps"]) * factor)
    return SolveContext(config, chart, domain, spec, drift, terminal, grid, start, times)


def select_epsilon(context: SolveContext) -> Tuple[EpsilonCertificate, bool]:
    """ Certified eps, or the configured override checked against the same bound; True when report-only. """
    solver = context.config.solver
    horizon = context.grid.horizon
    lipschitz = grid_lipschitz(context.terminal, context.grid.axes)
    flow = estimate_flow_continuity(context.spec, horizon, seed=context.config.seed)
    certificate = choose_epsilon(lipschitz, context.spec.dispersion_bound(context.grid.box), flow.value, horizon)
    override = solver["epsilon"]
    if override in (None, "auto"):
        return certificate, False
    epsilon = float(override)
    forced = replace(certificate, epsilon=epsilon, passed=bool(1.0 / epsilon >= certificate.bound))
    if forced.passed:
        return forced, False
    if not solver["force"]:
        raise ConfigError(f"epsilon override {epsilon} fails the certified bound 1/eps >= {certificate.bound:.4g}")
    logger.warning("Forced epsilon %s fails the certified bound %s; continuing in report-only mode", epsilon,
                   certificate.bound)
    return forced, True


def _run_solve(run: ScenarioRun):
    config = run.config
    manifest = run.manifest
    context = run.stage("setup", build_context, config)
    manifest.results["grid"] = context.grid.to_dict()
    manifest.results["path_grid"] = {"steps": len(context.times) - 1, "count": _path_count(config),
                                     "start": context.start.tolist()}
    paths = run.stage("forward", simulate_diffusion, context.spec, context.start, context.times, config.seed,
                      _path_count(config))
    certificate, report_only = run.stage("epsilon", select_epsilon, context)
    context.epsilon = certificate.epsilon
    manifest.certificates["epsilon"] = certificate.to_dict()
    manifest.report_only = report_only
    context.field = run.stage("pde", context.solve, context.terminal)
    context.field.epsilon = context.epsilon
    manifest.results["field"] = context.field.summary()
    zfield = run.stage("z-bound", gradient_field, context.field, context.spec)
    manifest.certificates["z_bound"] = z_bound_report(zfield, context.epsilon).to_dict()
    context.solution = run.stage("assembly", assemble_solution, context.field, paths, zfield=zfield)
    manifest.results["solution"] = context.solution.summary()
    residuals = run.stage("residual", residual_check, context.solution, context.chart, context.drift)
    manifest.results["residual"] = residuals.to_dict()
    for check in config.verify:
        report = run.stage(f"verify:{check}", SOLVE_CHECKS[check], context, run)
        run.record(report)
    run.stage("persist", _persist_solve, run, context, residuals)


def _path_count(config: ExperimentConfig) -> int:
    count = config.paths["count"]
    return run_setting("path_count", 1000) if count is None else int(count)


def _persist_solve(run: ScenarioRun, context: SolveContext, residuals):
    run.emit("paths.csv", context.solution.paths.long_table())
    run.emit("field.csv", context.field.long_table())
    per_path = residuals.per_path
    run.emit("residuals.csv", (["path", "max_residual"], np.column_stack([np.arange(len(per_path)), per_path])))


def check_terminal(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    mismatch = context.solution.terminal_mismatch()
    return VerificationReport("terminal", context.solution.paths.path_count, TERMINAL_TOLERANCE - mismatch, 0.0,
                              details={"mismatch": mismatch})


def check_domain_invariance(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    domain = context.require_domain("domain-invariance")
    values = context.field.values.reshape(-1, context.chart.dimension)
    chi = domain.chi_values(values)
    worst_index = int(np.argmax(chi))
    return VerificationReport("domain-invariance", chi.size, domain.level + INVARIANCE_SLACK - chi[worst_index], 0.0,
                              values[worst_index], {"max_chi": float(chi[worst_index]), "level": domain.level})


def check_outwardness(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    domain = context.require_domain("outwardness")
    result = verify.outwardness_check(domain, context.drift, 1.0 / context.epsilon, seed=context.config.seed,
                                      base_box=context.grid.box, noise_dimension=context.spec.noise_dimension)
    run.manifest.certificates["outwardness"] = result.to_dict()
    return VerificationReport("outwardness", result.sample_size, result.infimum + 1e-6, 0.0, result.witness,
                              {"classification": result.classification, "zeta": result.zeta})


def check_lsmc(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    section = context.config.lsmc
    regression = lsmc_solve(context.spec, context.gamma_drift(), context.terminal, context.start, context.times,
                            int(section["paths"]), int(section["degree"]), context.config.seed)
    gap = float(np.max(np.abs(regression.initial_value - context.solution.initial_value)))
    tolerance = max(3.0 * regression.standard_error, AGREEMENT_FLOOR)
    return VerificationReport("lsmc", regression.paths.path_count, tolerance - gap, 0.0, regression.initial_value,
                              {"pde": context.solution.initial_value.tolist(), "gap": gap,
                               "standard_error": regression.standard_error})


def check_reduction(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    reduction = reduce_1d(context.chart, context.drift)
    field = context.solve(reduction.transform_terminal(context.terminal), reduction.flat, reduction.drift, cutoff=False)
    reduced = assemble_solution(field, context.solution.paths, context.spec)
    back = reduction.map_back(reduced.X)
    gap = float(np.max(np.abs(back - context.solution.X)))
    return VerificationReport("reduction", context.solution.paths.path_count, AGREEMENT_FLOOR - gap, 0.0,
                              details={"gap": gap})


def check_integrability(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    domain = context.require_domain("integrability")
    alpha = 0.5 * alpha_for_ball(domain.radius) if domain.is_ball else 0.1
    estimate = verify.exp_integrability(context.solution, alpha, context.chart, domain, context.drift)
    if estimate.bound is not None:
        margin = estimate.bound - estimate.estimate
    else:
        margin = 0.0 if math.isfinite(estimate.estimate) else -math.inf
    return VerificationReport("integrability", context.solution.paths.path_count, margin, 0.0,
                              details=estimate.to_dict())


def check_drift_submartingale(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    domain = context.require_domain("drift-submartingale")
    return verify.drift_submartingale_check(context.solution, domain.chi_values, context.drift)


def check_transport(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    box = None if context.domain is None else context.domain.bounding_box()
    return verify.transport_inequality_suite(context.chart, 200, context.config.seed, box)


def check_hessian(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    rng = np.random.default_rng(context.config.seed)
    if context.domain is not None:
        x, y = context.domain.sample(rng, 200), context.domain.sample(rng, 200)
    else:
        x, y = sample_box(context.chart, rng, 200), sample_box(context.chart, rng, 200)
    return _hessian_report(context.chart, x, y, rng)


def _hessian_report(chart: ManifoldChart, x: np.ndarray, y: np.ndarray, rng: np.random.Generator):
    # flat charts meet the Hessian bounds with equality; close pairs would leave only difference error
    keep = distance_batch(chart, x, y) > HESSIAN_MIN_DISTANCE
    if not np.any(keep):
        raise PreconditionError(f"no sampled pair is more than {HESSIAN_MIN_DISTANCE} apart")
    u = rng.standard_normal((int(keep.sum()), 2 * chart.dimension))
    u /= np.linalg.norm(u, axis=1)[:, None]
    return verify.hessian_inequality_suite(chart, x[keep], y[keep], u)


def check_contraction(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    paths = context.solution.paths
    n = context.chart.dimension

    def solve(terminal):
        return assemble_solution(context.solve(terminal), paths, context.spec)

    if context.chart.is_flat and context.domain is None:
        def perturb(terminal, eta):
            return lambda b: terminal(b) + eta * np.eye(n)[0]
    else:
        centre = np.zeros(n) if context.domain is None else context.domain.center

        def perturb(terminal, eta):
            return lambda b: terminal(b) + eta * (centre - terminal(b))

    table = verify.contraction_curve(solve, context.terminal, perturb, CONTRACTION_ETAS, context.chart)
    run.emit("contraction.csv", (["eta", "delta1", "delta2"], table.rows()))
    return VerificationReport("contraction", paths.path_count, 0.0 if table.monotone else -1.0, 0.0,
                              details=table.to_dict())


def check_mollifier(context: SolveContext, run: ScenarioRun) -> VerificationReport:
    domain = context.require_domain("mollifier")
    paths = context.solution.paths

    def solve(drift):
        return assemble_solution(context.solve(context.terminal, drift=drift), paths, context.spec)

    report = verify.mollifier_consistency(context.drift, domain, TruncationParams(context.epsilon), solve,
                                          base_dimension=context.spec.base_dimension,
                                          noise_dimension=context.spec.noise_dimension, seed=context.config.seed)
    details = report.details
    run.emit("mollifier.csv", (["level", "lipschitz", "rate", "shift"],
                               np.column_stack([details["levels"], details["lipschitz"], details["rates"],
                                                details["shifts"]])))
    return report


SOLVE_CHECKS = {
    "terminal": check_terminal,
    "domain-invariance": check_domain_invariance,
    "outwardness": check_outwardness,
    "lsmc": check_lsmc,
    "reduction": check_reduction,
    "integrability": check_integrability,
    "drift-submartingale": check_drift_submartingale,
    "transport": check_transport,
    "hessian": check_hessian,
    "contraction": check_contraction,
    "mollifier": check_mollifier,
}


# Dirichlet pipeline


def build_problem(config: ExperimentConfig) -> DirichletProblem:
    section = config.dirichlet
    if section["box"] is None or section["boundary"] is None or section["x"] is None:
        raise ConfigError("dirichlet experiments need 'box', 'boundary' and 'x'")
    chart = load_chart(config.chart)
    if config.domain is None:
        raise ConfigError("dirichlet experiments need a target domain")
    domain = load_domain(config.domain, chart)
    spec = load_diffusion(config.diffusion)
    drift = load_drift(config.drift, chart.dimension, spec.base_dimension, spec.noise_dimension, chart)
    boundary = terminal_function(section["boundary"], spec.base_dimension, chart.dimension)
    return DirichletProblem(section["box"], spec, boundary, chart, domain, drift, section["exit_rate"], config.name,
                            dict(section))


def _run_dirichlet(run: ScenarioRun):
    config = run.config
    section = config.dirichlet
    manifest = run.manifest
    factor = 2 ** config.refine
    problem = run.stage("setup", build_problem, config)
    rate = run.stage("exit-rate", exit_rho_estimate, problem.box, problem.spec)
    manifest.certificates["exit_rate"] = rate.to_dict()
    if problem.exit_rate is None:
        problem.exit_rate = rate.safe
    flow = run.stage("flow", harmonic_map_flow, problem, float(section["flow_dx"]) / factor,
                     float(section["flow_horizon"]))
    manifest.results["flow"] = flow.to_dict()
    gamma = gamma_assemble(problem.chart, problem.domain, problem.drift, TruncationParams(float(section["epsilon"])))
    estimate = run.stage("monte-carlo", solve_dirichlet_mc, problem, section["x"], int(section["paths"]),
                         float(section["t_max"]), float(section["dt"]) / factor, gamma, seed=config.seed)
    manifest.results["monte_carlo"] = estimate.to_dict()
    tension = run.stage("tension", tension_residual, flow.values, flow.axes, problem.spec, problem.chart,
                        problem.drift)
    manifest.results["energy"] = energy(flow.values, flow.axes, problem.spec, problem.chart, problem.drift.potential)
    checks = {
        "mc-agreement": lambda: _mc_agreement(flow, estimate, section["x"]),
        "tension": lambda: VerificationReport("tension", tension.size, TENSION_TOLERANCE - float(np.max(tension)),
                                              0.0, details={"max": float(np.max(tension))}),
        "energy-descent": lambda: _energy_descent(flow),
        "small-drift": lambda: verify.small_drift_check(problem.drift, problem.exit_rate),
    }
    for check in config.verify:
        run.record(run.stage(f"verify:{check}", checks[check]))
    run.stage("persist", _persist_dirichlet, run, flow)


def _mc_agreement(flow, estimate, x) -> VerificationReport:
    relaxed = flow.evaluate(x)
    gap = float(np.max(np.abs(np.ravel(estimate.value) - relaxed)))
    tolerance = max(3.0 * estimate.standard_error, AGREEMENT_FLOOR)
    return VerificationReport("mc-agreement", estimate.path_count, tolerance - gap, 0.0, relaxed,
                              {"monte_carlo": np.ravel(estimate.value).tolist(), "gap": gap})


def _energy_descent(flow) -> VerificationReport:
    increases = np.diff(flow.energies)
    if increases.size == 0:
        return VerificationReport("energy-descent", 0, 0.0, 0.0)
    worst_step = int(np.argmax(increases))
    return VerificationReport("energy-descent", increases.size, DESCENT_TOLERANCE - increases[worst_step], 0.0,
                              [worst_step + 1], {"first": float(flow.energies[0]), "last": float(flow.energies[-1])})


def _persist_dirichlet(run: ScenarioRun, flow):
    run.emit("flow_grid.csv", flow.grid_table())
    run.emit("flow_trace.csv", flow.trace_table())


# Geometry tests


def _run_geomtest(run: ScenarioRun):
    config = run.config
    chart = run.stage("setup", load_chart, config.chart)
    box = None if config.grid["box"] is None else np.asarray(config.grid["box"], dtype=float)
    count = int(config.paths["count"] or 200)
    checks = {
        "metric": lambda: VerificationReport("metric", 64, check_metric(chart), 0.0),
        "hessian": lambda: _geometry_hessian(chart, box, count, config.seed),
        "transport": lambda: verify.transport_inequality_suite(chart, count, config.seed, box),
    }
    for check in config.verify:
        run.record(run.stage(f"verify:{check}", checks[check]))


def _geometry_hessian(chart: ManifoldChart, box: Optional[np.ndarray], count: int, seed: int) -> VerificationReport:
    rng = np.random.default_rng(seed)
    return _hessian_report(chart, sample_box(chart, rng, count, box), sample_box(chart, rng, count, box), rng)


# Reports


def load_manifests(directory: str) -> List[dict]:
    """ Every manifest below ``directory``, in a stable order. """
    found = []
    for root, _, files in sorted(os.walk(directory)):
        if MANIFEST_NAME in files:
            with open(os.path.join(root, MANIFEST_NAME), "r", encoding="utf-8") as handle:
                found.append(json.load(handle))
    return found


def report(manifests: Sequence[dict]) -> dict:
    """ One table per check family (failures first), pass/fail counts and observed orders of refinement series. """
    families = defaultdict(list)
    for manifest in manifests:
        checks = dict(manifest.get("checks", {}))
        z_bound = manifest.get("certificates", {}).get("z_bound")
        if z_bound is not None:
            checks["z-bound"] = {"passed": z_bound["passed"], "margin": z_bound["margin"],
                                 "witness": z_bound["location"]}
        if manifest.get("failure"):
            checks["stage"] = {"passed": False, "margin": float("nan"), "witness": None,
                               "details": manifest["failure"]}
        for name, check in checks.items():
            families[name].append({
                "scenario": manifest["scenario"],
                "refine": manifest.get("refine", 0),
                "passed": bool(check["passed"]),
                "margin": check.get("margin"),
                "witness": check.get("witness"),
            })
    tables = {}
    for name in sorted(families):
        rows = sorted(families[name], key=lambda r: (r["passed"], _sortable(r["margin"]), r["scenario"]))
        margins = [r["margin"] for r in rows if r["margin"] is not None and math.isfinite(r["margin"])]
        tables[name] = {
            "rows": rows,
            "passed": sum(r["passed"] for r in rows),
            "failed": sum(not r["passed"] for r in rows),
            "worst_margin": min(margins) if margins else None,
        }
    return {
        "manifests": len(manifests),
        "passed": all(m.get("passed", False) for m in manifests),
        "families": tables,
        "refinement": refinement_orders(manifests),
    }


def _sortable(margin) -> float:
    return math.inf if margin is None or not math.isfinite(margin) else margin


def refinement_orders(manifests: Sequence[dict]) -> Dict[str, List[dict]]:
    """ log2 of consecutive residual-median ratios within each scenario's refinement series. """
    series = defaultdict(list)
    for manifest in manifests:
        residual = manifest.get("results", {}).get("residual")
        if residual is None:
            continue
        series[manifest["config"]["name"]].append((manifest.get("refine", 0), residual["median"]))
    out = {}
    for name, levels in sorted(series.items()):
        levels.sort()
        if len(levels) < 2:
            continue
        rows = [{"refine": levels[0][0], "residual_median": levels[0][1], "observed_order": None}]
        for (_, coarse), (refine, fine) in zip(levels, levels[1:]):
            order = math.log2(coarse / fine) if coarse > 0 and fine > 0 else None
            rows.append({"refine": refine, "residual_median": fine, "observed_order": order})
        out[name] = rows
    return out


def render_summary(summary: dict) -> str:
    """ Plain-text version of ``report``. """
    lines = [f"{summary['manifests']} manifest(s), overall {'PASS' if summary['passed'] else 'FAIL'}", ""]
    for name, table in summary["families"].items():
        lines.append(f"[{name}] passed {table['passed']}, failed {table['failed']}, worst margin {table['worst_margin']}")
        for row in table["rows"]:
            status = "pass" if row["passed"] else "FAIL"
            witness = "" if row["passed"] or row["witness"] is None else f"  witness {row['witness']}"
            lines.append(f"  {status:4}  {row['scenario']:<32} refine {row['refine']}  margin {row['margin']}{witness}")
        lines.append("")
    for name, rows in summary["refinement"].items():
        lines.append(f"[refinement: {name}]")
        for row in rows:
            order = "-" if row["observed_order"] is None else f"{row['observed_order']:.3f}"
            lines.append(f"  refine {row['refine']}  residual median {row['residual_median']:.4e}  order {order}")
        lines.append("")
    return "\n".join(lines)


# Entry point


def _setup_logger(directory: str, verbose: bool = False) -> logging.Logger:
    root = logging.getLogger(LOGGER_NAME)
    for handler in list(root.handlers):
        handler.close()
        root.removeHandler(handler)
    level_name = "DEBUG" if verbose or DEBUGGING else settings.get("Logging", "level", fallback="INFO")
    root.setLevel(getattr(logging, level_name.upper(), logging.INFO))
    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    fh = logging.FileHandler(os.path.join(directory, settings.get("Logging", "logfile", fallback=LOGFILE)), mode="w")
    fh.setFormatter(formatter)
    sh = logging.StreamHandler()
    sh.setFormatter(formatter)
    root.addHandler(fh)
    root.addHandler(sh)
    root.info("Logger initialized.")
    return root


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manifold_bsde",
                                     description="Manifold-valued BSDE solvers and their numerical checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION} (built {BUILD_DATE})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    common.add_argument("--refine", type=int, default=None, help="halve the grid spacings this many times")
    common.add_argument("--out", default=None, help="output directory (default from default.ini)")
    common.add_argument("--force-epsilon", type=float, default=None, dest="force_epsilon",
                        help="use this truncation level even if it fails its certificate")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "PDE solve, assembly and residual check"),
                       ("verify", "solve plus the experiment's checks"),
                       ("dirichlet", "exit-time Monte Carlo and harmonic map flow")):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.add_argument("config", help="JSON experiment file or built-in scenario name")
    geometry = commands.add_parser("geomtest", parents=[common], help="geometric inequality suites on a chart")
    geometry.add_argument("chart", help="built-in chart name or JSON chart description")
    summary = commands.add_parser("report", parents=[common], help="summarise the manifests below a directory")
    summary.add_argument("directory")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or (args.directory if args.command == "report" else run_setting("output_dir", "runs"))
    os.makedirs(out, exist_ok=True)
    _setup_logger(out, args.verbose)
    try:
        if args.command == "report":
            manifests = load_manifests(args.directory)
            if not manifests:
                raise ConfigError(f"no {MANIFEST_NAME} found below {args.directory}")
            summary = report(manifests)
            write_json(os.path.join(out, "report.json"), summary)
            text = render_summary(summary)
            with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as handle:
                handle.write(text)
            print(text)
            return 0 if summary["passed"] else 1
        if args.command == "geomtest":
            config = geometry_config(args.chart)
        else:
            config = ExperimentConfig.load(args.config)
            wanted = DIRICHLET if args.command == "dirichlet" else SOLVE
            if config.kind != wanted:
                raise ConfigError(f"'{args.command}' needs a {wanted} experiment, '{config.name}' is {config.kind}")
            if args.command == "solve":
                config = replace(config, verify=[])
        config = config.with_overrides(args.seed, args.refine, out, args.force_epsilon)
        manifest = run_scenario(config)
    except ManifoldBSDEError as exc:
        logger.error("manifold_bsde failed: %s", exc)
        return 1
    logger.info("Run %s finished in %.1fs: %s", manifest.scenario, manifest.wall_clock,
                "PASS" if manifest.passed else "FAIL")
    return 0 if manifest.passed else 1
