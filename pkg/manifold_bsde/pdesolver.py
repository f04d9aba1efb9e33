# -*- coding: utf-8 -*-
"""Finite-difference solver for the quasilinear parabolic system

    du/dtau = L u + gamma(b, u, grad_x u sigma),    u(0, .) = F,

on a uniform box in R^d (d <= 2) with values in R^n (n <= 3). The time variable tau runs forward from the terminal
condition, so the BSDE solution is X_t = u(T - t, B_t). Far-field values are held by constant extension: ghost nodes
copy the edge value, which is exact for terminal functions that are constant off a compact set.

Notes
-----
The z-argument of gamma lags one level (it is taken from u at the previous level), so no nonlinear solve is needed.
The semi-implicit scheme treats the linear operator implicitly only: banded solve in 1-D, sparse LU in 2-D.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from . import LOGGER_NAME, MAX_TARGET_DIMENSION
from .forward import DiffusionSpec
from .settings import numeric
from .utilities.errors import BlowUpError, ConfigError, DimensionError, ExtrapolationError, ParameterError

logger = logging.getLogger(LOGGER_NAME + ".pdesolver")

EXPLICIT = "explicit"
SEMI_IMPLICIT = "semi-implicit"
SCHEMES = (EXPLICIT, SEMI_IMPLICIT)
MAX_SAVED_LEVELS = 500

TerminalFunction = Callable[[np.ndarray], np.ndarray]


@dataclass
class GridParams:
    """ Uniform space-time grid: spacing dx on ``box`` (d x 2), time step dt up to ``horizon``. """

    box: np.ndarray
    dx: float
    dt: float
    horizon: float
    save_every: Optional[int] = None

    def __post_init__(self):
        self.box = np.atleast_2d(np.asarray(self.box, dtype=float))
        if self.dx <= 0 or self.dt <= 0 or self.horizon <= 0:
            raise ParameterError("grid spacing, time step and horizon must be positive")
        if np.any(self.box[:, 1] - self.box[:, 0] < 2 * self.dx):
            raise ConfigError("working window must hold at least three nodes per axis")
        # the time step is shrunk so that it divides the horizon
        self.dt = self.horizon / self.steps

    @property
    def steps(self) -> int:
        return max(1, int(math.ceil(self.horizon / self.dt - 1e-9)))

    @property
    def axes(self) -> List[np.ndarray]:
        return [lo + self.dx * np.arange(int(round((hi - lo) / self.dx)) + 1) for lo, hi in self.box]

    def refined(self, factor: int = 2) -> "GridParams":
        """ dx / factor and dt / factor^2, keeping the parabolic ratio. """
        return GridParams(self.box, self.dx / factor, self.dt / factor ** 2, self.horizon)

    def to_dict(self) -> dict:
        return {"box": self.box.tolist(), "dx": self.dx, "dt": self.dt, "horizon": self.horizon, "steps": self.steps}


def working_window(support, horizon: float, sigma_sup: float) -> np.ndarray:
    """ Support box of F expanded by 4 sqrt(T) sigma_sup on every side. """
    support = np.atleast_2d(np.asarray(support, dtype=float))
    pad = 4.0 * math.sqrt(horizon) * sigma_sup
    return np.column_stack([support[:, 0] - pad, support[:, 1] + pad])


def mesh_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass
class SpaceTimeField:
    """ u(tau_k, x_j) on saved time levels; values has shape (K, *grid, n). """

    axes: List[np.ndarray]
    times: np.ndarray
    values: np.ndarray
    terminal: TerminalFunction
    dt: float
    dx: float
    scheme: str = EXPLICIT
    epsilon: Optional[float] = None
    cfl_ratio: float = float("nan")
    growth_constant: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def base_dimension(self) -> int:
        return len(self.axes)

    @property
    def target_dimension(self) -> int:
        return self.values.shape[-1]

    @property
    def box(self) -> np.ndarray:
        return np.array([[a[0], a[-1]] for a in self.axes])

    @property
    def points(self) -> np.ndarray:
        return mesh_points(self.axes)

    def level(self, tau: float) -> np.ndarray:
        """ Values at time tau, linear in time between saved levels. """
        return _time_interpolate(self.times, self.values, tau)

    def inside(self, points: np.ndarray) -> np.ndarray:
        box = self.box
        return np.all((points >= box[:, 0] - 1e-12) & (points <= box[:, 1] + 1e-12), axis=-1)

    def interpolate(self, tau: float, points: np.ndarray) -> np.ndarray:
        """ Multilinear interpolation of u(tau, .) at arbitrary base points (..., d). """
        return _space_interpolate(self, self.level(tau), points)

    def long_table(self):
        """ Rows t, x..., u... over saved levels. """
        grid = self.points.reshape(-1, self.base_dimension)
        columns = ["t"] + [f"x{i + 1}" for i in range(self.base_dimension)] + [f"u{i + 1}" for i in range(self.target_dimension)]
        rows = [np.hstack([np.full((len(grid), 1), t), grid, self.values[k].reshape(len(grid), -1)])
                for k, t in enumerate(self.times)]
        return columns, np.vstack(rows)

    def summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "dt": self.dt,
            "dx": self.dx,
            "horizon": self.horizon,
            "levels": int(len(self.times)),
            "epsilon": self.epsilon,
            "cfl_ratio": self.cfl_ratio,
            "growth_constant": self.growth_constant,
            "min": self.values.min(axis=tuple(range(self.values.ndim - 1))).tolist(),
            "max": self.values.max(axis=tuple(range(self.values.ndim - 1))).tolist(),
            **self.metadata,
        }


def _time_interpolate(times: np.ndarray, values: np.ndarray, tau: float) -> np.ndarray:
    if tau <= times[0]:
        return values[0]
    if tau >= times[-1]:
        return values[-1]
    k = int(np.searchsorted(times, tau, side="right")) - 1
    weight = (tau - times[k]) / (times[k + 1] - times[k])
    if weight == 0.0:
        return values[k]
    return (1.0 - weight) * values[k] + weight * values[k + 1]


def _space_interpolate(owner, level: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != owner.base_dimension:
        raise DimensionError(f"points need {owner.base_dimension} coordinates, got {points.shape[-1]}")
    outside = ~owner.inside(points)
    if np.any(outside):
        where = points[outside][0]
        raise ExtrapolationError(f"point {where.tolist()} lies outside the working window {owner.box.tolist()}")
    clipped = np.clip(points, owner.box[:, 0], owner.box[:, 1])
    interpolator = RegularGridInterpolator(tuple(owner.axes), level, method="linear")
    return interpolator(clipped.reshape(-1, owner.base_dimension)).reshape(points.shape[:-1] + level.shape[owner.base_dimension:])


def operator_matrix(spec: DiffusionSpec, axes: Sequence[np.ndarray], dx: float) -> sparse.csr_matrix:
    """ Central-difference L = 1/2 a_ij d_ij + b_i d_i on flattened nodes; ghost nodes repeat edge values. """
    points = mesh_points(axes)
    shape = points.shape[:-1]
    d = len(axes)
    a = spec.diffusion_matrix(points).reshape(-1, d, d)
    b = spec.b(points).reshape(-1, d)
    index = np.arange(int(np.prod(shape))).reshape(shape)
    grid = np.indices(shape).reshape(d, -1).T
    rows, cols, vals = [], [], []

    def neighbour(offset):
        moved = np.clip(grid + offset, 0, np.array(shape) - 1)
        return index[tuple(moved.T)]

    centre = index.reshape(-1)
    for i in range(d):
        unit = np.zeros(d, dtype=int)
        unit[i] = 1
        second = 0.5 * a[:, i, i] / dx ** 2
        first = b[:, i] / (2.0 * dx)
        rows += [centre, centre, centre]
        cols += [neighbour(unit), neighbour(-unit), centre]
        vals += [second + first, second - first, -2.0 * second]
        for j in range(i + 1, d):
            other = np.zeros(d, dtype=int)
            other[j] = 1
            mixed = a[:, i, j] / (4.0 * dx ** 2)
            for si, sj in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
                rows.append(centre)
                cols.append(neighbour(si * unit + sj * other))
                vals.append(si * sj * mixed)
    size = centre.size
    return sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(size, size)).tocsr()


def grid_gradient(values: np.ndarray, axes: Sequence[np.ndarray]) -> np.ndarray:
    """ d_x u per node: central in the interior, one-sided at the edges. Shape (*grid, n, d). """
    d = len(axes)
    parts = [np.gradient(values, axes[i], axis=i, edge_order=1) for i in range(d)]
    return np.stack(parts, axis=-1)


def _z_argument(values: np.ndarray, axes: Sequence[np.ndarray], sigma: np.ndarray) -> np.ndarray:
    return np.einsum("...id,...da->...ia", grid_gradient(values, axes), sigma)


def _check_finite(values: np.ndarray, step: int):
    bad = ~np.isfinite(values)
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0][:-1])
        raise BlowUpError(f"non-finite value at step {step}, node {node}", step, node)


class _Stepper:
    """ One time step of either scheme on flattened (nodes, n) arrays. """

    def __init__(self, operator: sparse.csr_matrix, dt: float, scheme: str, base_dimension: int):
        self.operator = operator
        self.dt = dt
        self.scheme = scheme
        if scheme == SEMI_IMPLICIT:
            system = (sparse.identity(operator.shape[0], format="csr") - dt * operator)
            if base_dimension == 1:
                banded = np.zeros((3, operator.shape[0]))
                banded[0, 1:] = system.diagonal(1)
                banded[1] = system.diagonal(0)
                banded[2, :-1] = system.diagonal(-1)
                self.banded = banded
                self.solve = lambda rhs: solve_banded((1, 1), self.banded, rhs)
            else:
                self.lu = splu(system.tocsc())
                self.solve = self.lu.solve

    def __call__(self, u: np.ndarray, source: np.ndarray) -> np.ndarray:
        if self.scheme == EXPLICIT:
            return u + self.dt * (self.operator @ u + source)
        return self.solve(u + self.dt * source)


def solve_parabolic(spec: DiffusionSpec, gamma: Callable, terminal: TerminalFunction, horizon: float,
                    grid: GridParams, scheme: str = EXPLICIT) -> SpaceTimeField:
    """ March du/dtau = L u + gamma(x, u, grad u sigma) from u(0) = F up to tau = horizon. """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme '{scheme}', expected one of {SCHEMES}")
    if abs(grid.horizon - horizon) > 1e-12:
        grid = GridParams(grid.box, grid.dx, grid.dt, horizon, grid.save_every)
    if grid.box.shape[0] != spec.base_dimension:
        raise DimensionError(f"grid box has {grid.box.shape[0]} axes, diffusion has dimension {spec.base_dimension}")
    axes = grid.axes
    points = mesh_points(axes)
    shape = points.shape[:-1]
    u = np.asarray(terminal(points), dtype=float)
    if u.shape[:-1] != shape:
        u = u.reshape(shape + (-1,))
    n = u.shape[-1]
    if n > MAX_TARGET_DIMENSION:
        raise DimensionError(f"target dimension {n} exceeds {MAX_TARGET_DIMENSION}")
    _check_finite(u, 0)

    a_sup = float(np.max(np.linalg.norm(spec.diffusion_matrix(points), ord=2, axis=(-2, -1))))
    ratio = grid.dt * a_sup / grid.dx ** 2
    limit = numeric("cfl_ratio", 0.4)
    if scheme == EXPLICIT and ratio > limit:
        raise ConfigError(f"CFL violated: dt max|a| / dx^2 = {ratio:.4g} > {limit}")

    sigma = spec.sigma(points)
    operator = operator_matrix(spec, axes, grid.dx)
    stepper = _Stepper(operator, grid.dt, scheme, spec.base_dimension)
    steps = grid.steps
    save_every = grid.save_every or max(1, int(math.ceil(steps / MAX_SAVED_LEVELS)))
    saved, times = [u.copy()], [0.0]
    flat = u.reshape(-1, n)
    growth = -np.inf
    size = float(np.max(np.abs(flat)))
    logger.debug("solving on %s nodes, %s steps of %s (%s)", flat.shape[0], steps, grid.dt, scheme)
    for k in range(steps):
        current = flat.reshape(shape + (n,))
        source = np.asarray(gamma(points, current, _z_argument(current, axes, sigma)), dtype=float).reshape(-1, n)
        flat = stepper(flat, source)
        _check_finite(flat.reshape(shape + (n,)), k + 1)
        new_size = float(np.max(np.abs(flat)))
        if size > 0:
            growth = max(growth, (new_size / size - 1.0) / grid.dt)
        size = new_size
        if (k + 1) % save_every == 0 or k + 1 == steps:
            saved.append(flat.reshape(shape + (n,)).copy())
            times.append((k + 1) * grid.dt)
    params = getattr(gamma, "params", None)
    return SpaceTimeField(
        axes=axes,
        times=np.asarray(times),
        values=np.stack(saved),
        terminal=terminal,
        dt=grid.dt,
        dx=grid.dx,
        scheme=scheme,
        epsilon=None if params is None else params.epsilon,
        cfl_ratio=ratio,
        growth_constant=float(max(growth, 0.0)) if np.isfinite(growth) else 0.0,
    )


@dataclass
class ZField:
    """ Z(tau, x) = grad_x u(tau, x) sigma(x) on the saved levels; values (K, *grid, n, d_W). """

    axes: List[np.ndarray]
    times: np.ndarray
    values: np.ndarray

    @property
    def base_dimension(self) -> int:
        return len(self.axes)

    @property
    def box(self) -> np.ndarray:
        return np.array([[a[0], a[-1]] for a in self.axes])

    def inside(self, points: np.ndarray) -> np.ndarray:
        box = self.box
        return np.all((points >= box[:, 0] - 1e-12) & (points <= box[:, 1] + 1e-12), axis=-1)

    def level(self, tau: float) -> np.ndarray:
        return _time_interpolate(self.times, self.values, tau)

    def interpolate(self, tau: float, points: np.ndarray) -> np.ndarray:
        return _space_interpolate(self, self.level(tau), points)

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values ** 2, axis=(-2, -1)))


def gradient_field(space_time: SpaceTimeField, spec: DiffusionSpec) -> ZField:
    """ Z = grad_x u sigma at every saved level. """
    sigma = spec.sigma(space_time.points)
    values = np.stack([_z_argument(level, space_time.axes, sigma) for level in space_time.values])
    return ZField(space_time.axes, space_time.times, values)


@dataclass
class ZBoundReport:
    """ Exhaustive max of ||Z|| over the grid against the truncation threshold 1/eps. """

    max_norm: float
    threshold: float
    passed: bool
    location: List[float]
    margin: float
    tight: bool

    def to_dict(self) -> dict:
        return {"max_norm": self.max_norm, "threshold": self.threshold, "passed": self.passed,
                "location": self.location, "margin": self.margin, "tight": self.tight}


def z_bound_report(zfield: ZField, epsilon: float) -> ZBoundReport:
    norms = zfield.norms()
    flat_index = int(np.argmax(norms))
    k, *node = np.unravel_index(flat_index, norms.shape)
    location = [float(zfield.times[k])] + [float(zfield.axes[i][j]) for i, j in enumerate(node)]
    largest = float(norms.reshape(-1)[flat_index])
    threshold = 1.0 / epsilon
    margin = (threshold - largest) / threshold
    passed = largest <= threshold
    tight = passed and margin < numeric("z_margin_flag", 0.05)
    if not passed:
        logger.warning("Z bound %s exceeds 1/eps = %s at (tau, x) = %s", largest, threshold, location)
    elif tight:
        logger.warning("Z bound passes with a margin of only %.2f%%", 100 * margin)
    return ZBoundReport(largest, threshold, passed, location, margin, tight)


@dataclass
class EpsilonCertificate:
    """ eps together with the bound B* = sigma_sup L_F sqrt(2 C_flow e^T) it was chosen against. """

    epsilon: float
    lipschitz_terminal: float
    flow_constant: float
    sigma_sup: float
    horizon: float
    bound: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def choose_epsilon(lipschitz_terminal: float, sigma_sup: float, flow_constant: float, horizon: float) -> EpsilonCertificate:
    """ eps = safety / B*, capped below 1. """
    if min(lipschitz_terminal, sigma_sup, flow_constant, horizon) < 0:
        raise ParameterError("epsilon inputs must be nonnegative")
    bound = sigma_sup * lipschitz_terminal * math.sqrt(2.0 * flow_constant * math.exp(horizon))
    cap = numeric("epsilon_cap", 0.99)
    epsilon = cap if bound == 0 else min(cap, numeric("safety_factor", 0.9) / bound)
    return EpsilonCertificate(epsilon, lipschitz_terminal, flow_constant, sigma_sup, horizon, bound,
                              bool(1.0 / epsilon >= bound))


def grid_lipschitz(terminal: TerminalFunction, axes: Sequence[np.ndarray]) -> float:
    """ Lipschitz constant of F measured by neighbour differences on the grid. """
    values = np.asarray(terminal(mesh_points(axes)), dtype=float)
    best = 0.0
    for i, axis in enumerate(axes):
        steps = np.diff(values, axis=i)
        spacing = np.diff(axis).reshape([-1 if j == i else 1 for j in range(len(axes))] + [1])
        quotient = np.sqrt(np.sum((steps / spacing) ** 2, axis=-1))
        best = max(best, float(np.max(quotient)))
    return best
