# -*- coding: utf-8 -*-
"""Riemannian kernels on a chart

Christoffel symbols, Riemannian norms of tangent matrices, geodesics, the exponential/logarithm pair, distances,
parallel transport and manifold Hessians. Geodesic and transport equations are integrated with scipy's adaptive
RK45; the logarithm is a damped Newton shooting method started from the Euclidean chord.
"""
import logging
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .. import LOGGER_NAME
from ..settings import numeric
from ..utilities.errors import ConvergenceError, DimensionError, EscapeError
from ..utilities.utils import batched_gradient, batched_hessian
from .charts import ManifoldChart

logger = logging.getLogger(LOGGER_NAME + ".geometry.kernels")
ACCEPTABLE_RESIDUAL = 1e-8


def _point(chart: ManifoldChart, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != chart.dimension:
        raise DimensionError(f"expected a point with {chart.dimension} coordinates, got {x.size}")
    return x


def _tangent_matrix(chart: ManifoldChart, z) -> Tuple[np.ndarray, bool]:
    """ Columns are tangent vectors; a 1-D array is one column. """
    z = np.asarray(z, dtype=float)
    vector = z.ndim == 1
    if vector:
        z = z[:, None]
    if z.ndim != 2 or z.shape[0] != chart.dimension:
        raise DimensionError(f"tangent matrix needs {chart.dimension} rows, got shape {np.shape(z)}")
    return z, vector


def christoffel(chart: ManifoldChart, x) -> np.ndarray:
    """ Gamma^i_jk(x) as an (n, n, n) array, symmetric in (j, k). """
    return chart.christoffel_batch(_point(chart, x))


def riemannian_norm_batch(chart: ManifoldChart, points: np.ndarray, z: np.ndarray) -> np.ndarray:
    """ ||z||_r = sqrt(sum over columns of z_a^T g z_a) for points (..., n), z (..., n, k). """
    g = chart.metric(points)
    return np.sqrt(np.maximum(np.einsum("...ia,...ij,...ja->...", z, g, z), 0.0))


def riemannian_norm(chart: ManifoldChart, x, z) -> float:
    x = chart.require(_point(chart, x))
    z, _ = _tangent_matrix(chart, z)
    return float(riemannian_norm_batch(chart, x, z))


def _geodesic_rhs(chart: ManifoldChart, extra_columns: int = 0):
    n = chart.dimension

    def rhs(_, state):
        position, velocity = state[:n], state[n:2 * n]
        gamma = chart.christoffel_batch(position, checked=False)
        acceleration = -np.einsum("kij,i,j->k", gamma, velocity, velocity)
        if not extra_columns:
            return np.concatenate([velocity, acceleration])
        columns = state[2 * n:].reshape(n, extra_columns)
        transport = -np.einsum("kjl,j,la->ka", gamma, velocity, columns)
        return np.concatenate([velocity, acceleration, transport.ravel()])

    return rhs


def _leave_box(chart: ManifoldChart):
    n = chart.dimension
    lo, hi = chart.bounds[:, 0], chart.bounds[:, 1]

    def event(_, state):
        position = state[:n]
        return float(min(np.min(position - lo), np.min(hi - position)))

    event.terminal = True
    event.direction = -1
    return event


def _integrate(chart: ManifoldChart, x, v, t: float, columns: Optional[np.ndarray] = None, t_eval=None):
    x = chart.require(_point(chart, x))
    v = _point(chart, v)
    extra = 0 if columns is None else columns.shape[1]
    state = np.concatenate([x, v] + ([] if columns is None else [columns.ravel()]))
    solution = solve_ivp(
        _geodesic_rhs(chart, extra),
        (0.0, float(t)),
        state,
        method="RK45",
        rtol=numeric("geodesic_rtol", 1e-11),
        atol=numeric("geodesic_atol", 1e-12),
        events=_leave_box(chart),
        t_eval=t_eval,
    )
    if solution.status == 1:
        exit_time = float(solution.t_events[0][0])
        raise EscapeError(f"geodesic from {x.tolist()} left chart '{chart.name}' at t={exit_time:.6g}",
                          exit_time, solution.y_events[0][0][:chart.dimension])
    if solution.status != 0:
        raise ConvergenceError(f"geodesic integration failed: {solution.message}")
    return solution


def geodesic_shoot(chart: ManifoldChart, x, v, t: float = 1.0) -> np.ndarray:
    """ exp_x(t v): integrate the geodesic equation from x with initial velocity v. """
    x = chart.require(_point(chart, x))
    v = _point(chart, v)
    if not np.any(v) or t == 0:
        return x.copy()
    if chart.is_flat:
        end = x + t * v
        if not chart.contains(end):
            with np.errstate(divide="ignore", invalid="ignore"):
                hits = np.where(v > 0, (chart.bounds[:, 1] - x) / v, (chart.bounds[:, 0] - x) / v)
            exit_time = float(np.min(hits[v != 0]))
            raise EscapeError(f"geodesic from {x.tolist()} left chart '{chart.name}' at t={exit_time:.6g}",
                              exit_time, x + exit_time * v)
        return end
    return _integrate(chart, x, v, t).y[:chart.dimension, -1]


def geodesic_speeds(chart: ManifoldChart, x, v, t: float = 1.0, count: int = 33) -> np.ndarray:
    """ |gamma'(s)|_r at ``count`` equally spaced parameters in [0, t]. """
    n = chart.dimension
    times = np.linspace(0.0, t, count)
    solution = _integrate(chart, x, v, t, t_eval=times)
    positions, velocities = solution.y[:n].T, solution.y[n:2 * n].T
    return riemannian_norm_batch(chart, positions, velocities[:, :, None])


def log_map(chart: ManifoldChart, x, x_prime) -> np.ndarray:
    """ Initial velocity v with exp_x(v) = x'. Damped Newton shooting, damping halved on residual increase. """
    x = chart.require(_point(chart, x))
    target = chart.require(_point(chart, x_prime))
    if np.array_equal(x, target):
        return np.zeros(chart.dimension)
    if chart.is_flat:
        return target - x
    tolerance = numeric("newton_tol", 1e-10)
    max_iter = int(numeric("newton_max_iter", 100))

    velocity = target - x
    end = None
    for _ in range(60):
        try:
            end = geodesic_shoot(chart, x, velocity)
            break
        except EscapeError:
            velocity = 0.5 * velocity
    if end is None:
        raise ConvergenceError(f"no admissible initial chord from {x.tolist()} to {target.tolist()}")
    residual = end - target
    size = np.linalg.norm(residual)
    for iteration in range(max_iter):
        if size <= tolerance:
            return velocity
        jacobian = np.empty((chart.dimension, chart.dimension))
        h = 1e-7 * (1.0 + np.linalg.norm(velocity))
        for axis in range(chart.dimension):
            nudged = velocity.copy()
            nudged[axis] += h
            jacobian[:, axis] = (geodesic_shoot(chart, x, nudged) - end) / h
        step = np.linalg.solve(jacobian, -residual)
        damping = 1.0
        while damping > 1e-8:
            trial = velocity + damping * step
            try:
                trial_end = geodesic_shoot(chart, x, trial)
            except EscapeError:
                damping *= 0.5
                continue
            trial_size = np.linalg.norm(trial_end - target)
            if trial_size < size:
                velocity, end, size = trial, trial_end, trial_size
                residual = end - target
                break
            damping *= 0.5
        else:
            if size <= ACCEPTABLE_RESIDUAL:
                return velocity
            raise ConvergenceError(f"log map line search stalled after {iteration} iterations", iteration, size)
    if size <= ACCEPTABLE_RESIDUAL:
        return velocity
    raise ConvergenceError(f"log map did not converge in {max_iter} iterations", max_iter, size)


def distance(chart: ManifoldChart, x, x_prime) -> float:
    """ Riemannian distance; closed form for built-ins, |log_x x'|_r otherwise. """
    x = chart.require(_point(chart, x))
    x_prime = chart.require(_point(chart, x_prime))
    if chart.distance_fn is not None:
        return float(chart.distance_fn(x, x_prime))
    return riemannian_norm(chart, x, log_map(chart, x, x_prime))


def distance_batch(chart: ManifoldChart, points: np.ndarray, others: np.ndarray) -> np.ndarray:
    """ Vectorised distance for closed-form charts, a loop over shooting otherwise. """
    points, others = np.broadcast_arrays(np.asarray(points, dtype=float), np.asarray(others, dtype=float))
    if chart.distance_fn is not None:
        return np.asarray(chart.distance_fn(points, others), dtype=float)
    batch = points.shape[:-1]
    out = np.empty(batch)
    for index in np.ndindex(batch):
        out[index] = distance(chart, points[index], others[index])
    return out


def parallel_transport(chart: ManifoldChart, x, x_prime, z) -> np.ndarray:
    """ Transport the columns of z from x to x' along the connecting geodesic. """
    z, vector = _tangent_matrix(chart, z)
    x = chart.require(_point(chart, x))
    x_prime = chart.require(_point(chart, x_prime))
    if np.array_equal(x, x_prime) or chart.is_flat:
        out = z.copy()
    else:
        velocity = log_map(chart, x, x_prime)
        solution = _integrate(chart, x, velocity, 1.0, columns=z)
        out = solution.y[2 * chart.dimension:, -1].reshape(z.shape)
    return out[:, 0] if vector else out


def manifold_hessian_batch(chart: ManifoldChart, scalar_fn: Callable[[np.ndarray], np.ndarray],
                           points: np.ndarray, step: Optional[float] = None) -> np.ndarray:
    """ Hess h_jk = d_j d_k h - Gamma^l_jk d_l h for a batched scalar function (m, n) -> (m,). """
    points = chart.require(np.atleast_2d(np.asarray(points, dtype=float)))
    step = numeric("hessian_step", 1e-4) if step is None else step
    second = batched_hessian(scalar_fn, points, step)
    if chart.is_flat:
        return second
    gradient = batched_gradient(scalar_fn, points, step)
    hess = second - np.einsum("mljk,ml->mjk", chart.christoffel_batch(points), gradient)
    return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def manifold_hessian(chart: ManifoldChart, scalar_fn: Callable[[np.ndarray], np.ndarray], x) -> np.ndarray:
    """ Hessian form at one point; scalar_fn must accept a batch of points of shape (m, n). """
    return manifold_hessian_batch(chart, scalar_fn, _point(chart, x)[None, :])[0]


def sample_box(chart: ManifoldChart, rng: np.random.Generator, count: int, box: Optional[np.ndarray] = None) -> np.ndarray:
    box = chart.bounds if box is None else np.asarray(box, dtype=float)
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((count, chart.dimension))


def norm_equivalence_constant(chart: ManifoldChart, sample_count: int = 1000, seed: int = 0,
                              box: Optional[np.ndarray] = None, columns: int = 2) -> float:
    """ Smallest c with ||z||/c <= ||z||_r <= c ||z|| over a sample of (x, z). """
    rng = np.random.default_rng(seed)
    points = sample_box(chart, rng, sample_count, box)
    z = rng.standard_normal((sample_count, chart.dimension, columns))
    ratio = riemannian_norm_batch(chart, points, z) / np.linalg.norm(z, axis=(1, 2))
    return float(max(np.max(ratio), np.max(1.0 / ratio)))
