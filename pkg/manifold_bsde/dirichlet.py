# -*- coding: utf-8 -*-
"""Exit-time problems

The Dirichlet problem for harmonic maps with drift, L_M phi - f(x, phi, grad phi sigma) = 0 on a box with phi equal
to a boundary map on its edges, solved two ways: by the exit-time BSDE (phi(x) = X_0 when the terminal time is the
first exit of B from the box) and by relaxing the parabolic flow du/dt = L_M u - f to a steady state.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy import linalg
from scipy.interpolate import RegularGridInterpolator

from . import LOGGER_NAME
from .bsde import PICARD_ITERATIONS, PICARD_TOLERANCE, RegressionBasis
from .convexity import ConvexDomain
from .drift import DriftField
from .forward import DiffusionSpec, exit_time, simulate_diffusion, uniform_grid
from .geometry import ManifoldChart, riemannian_norm_batch
from .pdesolver import grid_gradient, mesh_points, operator_matrix
from .settings import numeric
from .utilities.errors import BasisError, ConfigError, ConvergenceError, DomainError, HorizonError
from .verify import small_drift_check

logger = logging.getLogger(LOGGER_NAME + ".dirichlet")

MAX_CENSORED = 1e-3
FLOW_TOLERANCE = 1e-8
FLOW_PATIENCE = 10


@dataclass
class DirichletProblem:
    """ Base box, diffusion on it, boundary map into the target domain and the drift. """

    box: np.ndarray
    spec: DiffusionSpec
    boundary_map: Callable[[np.ndarray], np.ndarray]
    chart: ManifoldChart
    domain: ConvexDomain
    drift: DriftField
    exit_rate: Optional[float] = None
    name: str = "dirichlet"
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        self.box = np.atleast_2d(np.asarray(self.box, dtype=float))
        if self.box.shape[0] != self.spec.base_dimension:
            raise ConfigError(f"box has {self.box.shape[0]} axes, diffusion has dimension {self.spec.base_dimension}")
        if np.any(self.box[:, 0] >= self.box[:, 1]):
            raise ConfigError("base box is empty")
        values = self.boundary_values(self.boundary_points(64))
        excess = self.domain.chi_values(values) - self.domain.level
        if np.any(excess > 1e-9):
            bad = values[int(np.argmax(excess))]
            raise DomainError(f"boundary map leaves the target domain at {bad.tolist()}")

    @property
    def base_dimension(self) -> int:
        return self.box.shape[0]

    def boundary_points(self, per_edge: int) -> np.ndarray:
        """ Endpoints in 1-D, evenly spaced points on each edge in 2-D. """
        if self.base_dimension == 1:
            return self.box.T.copy()
        (x0, x1), (y0, y1) = self.box
        s = np.linspace(0.0, 1.0, per_edge)
        edges = [np.column_stack([x0 + s * (x1 - x0), np.full_like(s, y)]) for y in (y0, y1)]
        edges += [np.column_stack([np.full_like(s, x), y0 + s * (y1 - y0)]) for x in (x0, x1)]
        return np.vstack(edges)

    def boundary_values(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.asarray(self.boundary_map(points), dtype=float).reshape(points.shape[:-1] + (self.chart.dimension,))

    def contains(self, x: np.ndarray) -> bool:
        """ Closed box membership, edges within floating tolerance. """
        x = np.asarray(x, dtype=float)
        lo, hi = self.box[:, 0], self.box[:, 1]
        return bool(np.all(((x >= lo) | np.isclose(x, lo)) & ((x <= hi) | np.isclose(x, hi))))

    def on_boundary(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return self.contains(x) and bool(np.any(np.isclose(x, self.box[:, 0]) | np.isclose(x, self.box[:, 1])))


# Exit rate


@dataclass
class ExitRate:
    """ Principal Dirichlet eigenvalue of -L on the box and the safe exponent below it. """

    eigenvalue: float
    safe: float
    method: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_elliptic(spec: DiffusionSpec, box: np.ndarray, sample_count: int = 256) -> None:
    rng = np.random.default_rng(0)
    points = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((sample_count, box.shape[0]))
    smallest = float(np.min(np.linalg.eigvalsh(spec.diffusion_matrix(points))))
    if smallest <= 0:
        raise ConfigError(f"diffusion is not uniformly elliptic on the box (min eigenvalue {smallest:g})")


def exit_rho_estimate(box, spec: DiffusionSpec, safety: Optional[float] = None, nodes: int = 61) -> ExitRate:
    """ lambda_1 in closed form for constant diagonal coefficients, otherwise from the finite-difference operator. """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    safety = numeric("safety_factor", 0.9) if safety is None else safety
    _check_elliptic(spec, box)
    d = box.shape[0]
    if spec.constant:
        a = spec.diffusion_matrix(np.zeros(d))
        b = spec.b(np.zeros(d))
        if np.allclose(a, np.diag(np.diag(a))):
            lengths = box[:, 1] - box[:, 0]
            diagonal = np.diag(a)
            eigenvalue = float(np.sum(diagonal * np.pi ** 2 / (2.0 * lengths ** 2) + b ** 2 / (2.0 * diagonal)))
            return ExitRate(eigenvalue, safety * eigenvalue, "closed-form")
    dx = float(np.min(box[:, 1] - box[:, 0])) / (nodes - 1)
    axes = [lo + dx * np.arange(int(round((hi - lo) / dx)) + 1) for lo, hi in box]
    operator = operator_matrix(spec, axes, dx)
    shape = tuple(len(a) for a in axes)
    interior = np.ones(shape, dtype=bool)
    for axis in range(d):
        index = [slice(None)] * d
        index[axis] = [0, -1]
        interior[tuple(index)] = False
    keep = np.flatnonzero(interior.ravel())
    restricted = -operator[keep][:, keep].toarray()
    eigenvalue = float(np.min(linalg.eigvals(restricted).real))
    return ExitRate(eigenvalue, safety * eigenvalue, "finite-difference")


# Monte Carlo


@dataclass
class MCEstimate:
    """ phi(x) = X_0 with its standard error and the exit statistics behind it. """

    value: np.ndarray
    standard_error: float
    censored_fraction: float
    path_count: int
    mean_exit_time: float = float("nan")

    def to_dict(self) -> dict:
        return {"value": np.ravel(self.value).tolist(), "standard_error": self.standard_error,
                "censored_fraction": self.censored_fraction, "paths": self.path_count,
                "mean_exit_time": self.mean_exit_time}


def solve_dirichlet_mc(problem: DirichletProblem, x, path_count: int = 10000, t_max: float = 2.0, dt: float = 2.5e-3,
                       gamma: Optional[Callable] = None, degree: int = 2, seed: int = 0) -> MCEstimate:
    """ Exit-time BSDE: X = phi_bar(B_tau) from the exit on, regression over surviving paths before it.

    ``gamma`` is the assembled drift (see ``drift.gamma_assemble``); None means a zero drift.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if not problem.contains(x):
        raise DomainError(f"start point {x.tolist()} lies outside the box {problem.box.tolist()}")
    if problem.on_boundary(x):
        return MCEstimate(problem.boundary_values(np.clip(x, problem.box[:, 0], problem.box[:, 1])), 0.0, 0.0, 0)
    if problem.exit_rate is not None and problem.drift.lipschitz is not None and problem.drift.bound is not None:
        report = small_drift_check(problem.drift, problem.exit_rate)
        if not report.passed:
            logger.warning("drift constants exceed the small-drift limit (%s)", report.details["limit"])
    grid = uniform_grid(t_max, int(round(t_max / dt)))
    paths = simulate_diffusion(problem.spec, x, grid, seed, path_count)
    record = exit_time(problem.spec, problem.box, paths)
    if record.censored_fraction > MAX_CENSORED:
        raise HorizonError(f"{record.censored_fraction:.2%} of paths did not exit before t_max={t_max}")
    terminal = problem.boundary_values(record.point)
    n = terminal.shape[1]
    X = np.repeat(terminal[:, None, :], paths.steps + 1, axis=1)
    accumulated = np.zeros((path_count, n))
    for k in range(paths.steps - 1, -1, -1):
        alive = record.index > k
        if not np.any(alive):
            continue
        step = paths.times[k + 1] - paths.times[k]
        points = paths.base[alive, k]
        following = X[alive, k + 1]
        basis = _alive_basis(points, degree)
        weighted = following[:, :, None] * paths.increments[alive, k][:, None, :] / step
        Z = basis.project(weighted).reshape(len(points), n, -1)
        expected = basis.project(following)
        current = expected
        if gamma is not None:
            for _ in range(PICARD_ITERATIONS):
                update = expected + gamma(points, current, Z) * step
                change = float(np.max(np.abs(update - current)))
                current = update
                if change <= PICARD_TOLERANCE:
                    break
            else:
                raise ConvergenceError(f"Picard iteration at step {k} did not settle", PICARD_ITERATIONS, change)
            accumulated[alive] += gamma(points, current, Z) * step
        X[alive, k] = current
    pathwise = terminal + accumulated
    value = X[:, 0].mean(axis=0)
    se = float(np.max(np.std(pathwise, axis=0)) / math.sqrt(path_count))
    return MCEstimate(value, se, record.censored_fraction, path_count, float(np.mean(record.time)))


def _alive_basis(points: np.ndarray, degree: int) -> RegressionBasis:
    """ Full basis when enough survivors remain, constants otherwise. """
    if len(points) < 20 * (degree + 1) ** points.shape[1]:
        degree = 0
    try:
        return RegressionBasis(points, degree)
    except BasisError:
        return RegressionBasis(points, 0)


# Harmonic map flow


@dataclass
class FlowResult:
    """ Relaxed map on the base grid with its convergence trace. """

    axes: List[np.ndarray]
    values: np.ndarray
    converged: bool
    steps: int
    time: float
    updates: np.ndarray
    energies: np.ndarray
    chi_max: np.ndarray

    def evaluate(self, x) -> np.ndarray:
        interpolator = RegularGridInterpolator(tuple(self.axes), self.values)
        return interpolator(np.atleast_2d(np.asarray(x, dtype=float)))[0]

    def trace_table(self):
        steps = np.arange(1, len(self.updates) + 1)
        return ["step", "max_update", "energy", "chi_max"], np.column_stack(
            [steps, self.updates, self.energies, self.chi_max])

    def grid_table(self):
        points = mesh_points(self.axes).reshape(-1, len(self.axes))
        n = self.values.shape[-1]
        columns = [f"x{i + 1}" for i in range(len(self.axes))] + [f"phi{i + 1}" for i in range(n)]
        return columns, np.hstack([points, self.values.reshape(-1, n)])

    def to_dict(self) -> dict:
        return {"converged": self.converged, "steps": self.steps, "time": self.time,
                "final_update": float(self.updates[-1]) if len(self.updates) else 0.0,
                "final_energy": float(self.energies[-1]) if len(self.energies) else float("nan"),
                "chi_max": float(np.max(self.chi_max)) if len(self.chi_max) else float("nan")}


def _boundary_mask(shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        index = [slice(None)] * len(shape)
        index[axis] = [0, -1]
        mask[tuple(index)] = True
    return mask


def initial_guess(problem: DirichletProblem, axes: List[np.ndarray]) -> np.ndarray:
    """ Linear interpolation of the end values in 1-D, a Coons patch of the edge values in 2-D. """
    if len(axes) == 1:
        ends = problem.boundary_values(problem.box.T)
        s = ((axes[0] - axes[0][0]) / (axes[0][-1] - axes[0][0]))[:, None]
        return (1.0 - s) * ends[0] + s * ends[1]
    xs, ys = axes
    u = ((xs - xs[0]) / (xs[-1] - xs[0]))[:, None, None]
    v = ((ys - ys[0]) / (ys[-1] - ys[0]))[None, :, None]

    def edge(px, py):
        return problem.boundary_values(np.stack(np.broadcast_arrays(px, py), axis=-1))

    bottom, top = edge(xs, ys[0])[:, None], edge(xs, ys[-1])[:, None]
    left, right = edge(xs[0], ys)[None], edge(xs[-1], ys)[None]
    corners = [edge(xs[0], ys[0]), edge(xs[-1], ys[0]), edge(xs[0], ys[-1]), edge(xs[-1], ys[-1])]
    bilinear = ((1 - u) * (1 - v) * corners[0] + u * (1 - v) * corners[1] + (1 - u) * v * corners[2]
                + u * v * corners[3])
    return (1 - v) * bottom + v * top + (1 - u) * left + u * right - bilinear


def tension_field(values: np.ndarray, axes: List[np.ndarray], spec: DiffusionSpec, chart: ManifoldChart,
                  drift: DriftField, operator=None) -> np.ndarray:
    """ L_h u + 1/2 Gamma(u)(Z, Z) - f(b, u, Z) at every node (edges use one-sided gradients). """
    points = mesh_points(axes)
    shape = points.shape[:-1]
    n = values.shape[-1]
    dx = float(axes[0][1] - axes[0][0])
    operator = operator_matrix(spec, axes, dx) if operator is None else operator
    linear = (operator @ values.reshape(-1, n)).reshape(shape + (n,))
    Z = np.einsum("...id,...da->...ia", grid_gradient(values, axes), spec.sigma(points))
    out = linear - drift(points, values, Z)
    if not chart.is_flat:
        gamma = chart.christoffel_batch(values, checked=False)
        out += 0.5 * np.einsum("...ijk,...ja,...ka->...i", gamma, Z, Z)
    return out


def tension_residual(values: np.ndarray, axes: List[np.ndarray], spec: DiffusionSpec, chart: ManifoldChart,
                     drift: DriftField) -> np.ndarray:
    """ ||L_M phi - f||_r at interior nodes. """
    tension = tension_field(values, axes, spec, chart, drift)
    norms = riemannian_norm_batch(chart, values, tension[..., None])
    interior = tuple(slice(1, -1) for _ in axes)
    return norms[interior]


def energy(values: np.ndarray, axes: List[np.ndarray], spec: DiffusionSpec, chart: ManifoldChart,
           potential: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> float:
    """ 1/2 sum over cells of a^{ab} (d_a u | d_b u)_r times cell volume, plus 2 int G by the trapezoid rule. """
    d = len(axes)
    dx = float(axes[0][1] - axes[0][0])
    points = mesh_points(axes)
    if d == 1:
        slopes = (np.diff(values, axis=0) / dx)[:, :, None]
        centres = 0.5 * (values[1:] + values[:-1])
        base = 0.5 * (points[1:] + points[:-1])
    else:
        dux = np.diff(values, axis=0) / dx
        duy = np.diff(values, axis=1) / dx
        slopes = np.stack([0.5 * (dux[:, 1:] + dux[:, :-1]), 0.5 * (duy[1:] + duy[:-1])], axis=-1)
        centres = 0.25 * (values[1:, 1:] + values[:-1, 1:] + values[1:, :-1] + values[:-1, :-1])
        base = 0.25 * (points[1:, 1:] + points[:-1, 1:] + points[1:, :-1] + points[:-1, :-1])
    a = spec.diffusion_matrix(base)
    g = chart.metric(centres)
    density = 0.5 * np.einsum("...ab,...ia,...ij,...jb->...", a, slopes, g, slopes)
    total = float(np.sum(density)) * dx ** d
    if potential is not None:
        weights = np.ones(values.shape[:-1])
        for axis in range(d):
            index = [slice(None)] * d
            index[axis] = [0, -1]
            weights[tuple(index)] *= 0.5
        total += 2.0 * float(np.sum(weights * potential(points, values))) * dx ** d
    return total


def harmonic_map_flow(problem: DirichletProblem, dx: float, horizon: float, dt: Optional[float] = None,
                      record_every: int = 1, tolerance: float = FLOW_TOLERANCE) -> FlowResult:
    """ Explicit relaxation of du/dt = L_M u - f with the boundary pinned to the boundary map.

    Stops once the sup-norm update stays below ``tolerance`` for ten consecutive steps, or at ``horizon``.
    """
    if not horizon > 0:
        raise ConfigError(f"flow horizon must be positive, got {horizon}")
    spec, chart = problem.spec, problem.chart
    axes = [lo + dx * np.arange(int(round((hi - lo) / dx)) + 1) for lo, hi in problem.box]
    points = mesh_points(axes)
    a_sup = float(np.max(np.linalg.norm(spec.diffusion_matrix(points), ord=2, axis=(-2, -1))))
    limit = numeric("cfl_ratio", 0.4) * dx ** 2 / a_sup
    dt = 0.9 * limit if dt is None else dt
    if dt > limit:
        raise ConfigError(f"flow step {dt} exceeds the CFL limit {limit}")
    u = initial_guess(problem, axes)
    mask = _boundary_mask(u.shape[:-1])
    u[mask] = problem.boundary_values(points[mask])
    operator = operator_matrix(spec, axes, dx)
    potential = problem.drift.potential
    updates, energies, chi_max = [], [], []
    quiet = 0
    size = 0.0
    steps = int(math.ceil(horizon / dt))
    converged = False
    k = 0
    for k in range(1, steps + 1):
        change = dt * tension_field(u, axes, spec, chart, problem.drift, operator)
        change[mask] = 0.0
        u = u + change
        if not np.all(np.isfinite(u)):
            raise ConvergenceError(f"harmonic map flow blew up at step {k}", k)
        size = float(np.max(np.abs(change)))
        if k % record_every == 0:
            updates.append(size)
            energies.append(energy(u, axes, spec, chart, potential))
            chi_max.append(float(np.max(problem.domain.chi_values(u.reshape(-1, u.shape[-1])))))
        quiet = quiet + 1 if size < tolerance else 0
        if quiet >= FLOW_PATIENCE:
            converged = True
            break
    if not converged:
        logger.warning("harmonic map flow not converged at S=%s (last update %s)", horizon, size)
    return FlowResult(axes, u, converged, k, k * dt, np.asarray(updates), np.asarray(energies), np.asarray(chi_max))
