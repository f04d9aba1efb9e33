# -*- coding: utf-8 -*-
"""BSDE solutions

Two independent routes to the solution (X, Z) of dX = Z dW + (-1/2 Gamma(X)(Z, Z) + f(B, X, Z)) dt, X_T = F(B_T):
assembly from the parabolic field (X_t = u(T - t, B_t), Z_t = grad u sigma) and least-squares Monte Carlo backward
induction. ``residual_check`` measures how well either one satisfies the Euler form of the equation along paths.
``reduce_1d`` maps a one-dimensional target to arclength, where the connection term disappears.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import roots_legendre

from . import LOGGER_NAME
from .drift import DriftField
from .forward import DiffusionSpec, PathBundle, simulate_diffusion
from .geometry import ManifoldChart, interval_chart
from .pdesolver import SpaceTimeField, ZField, gradient_field
from .utilities.errors import BasisError, ConvergenceError, DimensionError, DomainError, MetricError, ParameterError

logger = logging.getLogger(LOGGER_NAME + ".bsde")

PDE_ASSEMBLED = "pde-assembled"
LSMC = "lsmc"
PICARD_ITERATIONS = 10
PICARD_TOLERANCE = 1e-6


@dataclass
class BSDESolution:
    """ Paths with X and Z filled in, plus where they came from. """

    paths: PathBundle
    provenance: str
    terminal: Callable[[np.ndarray], np.ndarray]
    pde_field: Optional[SpaceTimeField] = None
    standard_error: Optional[float] = None
    details: dict = field(default_factory=dict)

    @property
    def X(self) -> np.ndarray:
        return self.paths.X

    @property
    def Z(self) -> np.ndarray:
        return self.paths.Z

    @property
    def initial_value(self) -> np.ndarray:
        """ Mean of X_0 over paths (a single value when all paths share their start). """
        return self.paths.X[:, 0].mean(axis=0)

    def terminal_mismatch(self) -> float:
        return float(np.max(np.abs(self.paths.X[:, -1] - self.terminal(self.paths.base[:, -1]))))

    def summary(self) -> dict:
        return {
            "provenance": self.provenance,
            "paths": self.paths.path_count,
            "steps": self.paths.steps,
            "X0": self.initial_value.tolist(),
            "standard_error": self.standard_error,
            "max_Z": float(np.max(np.sqrt(np.sum(self.paths.Z ** 2, axis=(-2, -1))))),
            **self.details,
        }


def assemble_solution(space_time: SpaceTimeField, paths: PathBundle, spec: Optional[DiffusionSpec] = None,
                      zfield: Optional[ZField] = None) -> BSDESolution:
    """ X_t = u(T - t, B_t) and Z_t = Z(T - t, B_t); the endpoint uses F itself. """
    if paths.base.shape[2] != space_time.base_dimension:
        raise DimensionError(f"paths live in R^{paths.base.shape[2]}, field in R^{space_time.base_dimension}")
    if abs(paths.horizon - space_time.horizon) > 1e-9:
        raise ParameterError(f"path horizon {paths.horizon} differs from field horizon {space_time.horizon}")
    if zfield is None:
        if spec is None:
            raise ParameterError("assembling Z needs either the diffusion or a precomputed Z field")
        zfield = gradient_field(space_time, spec)
    horizon = space_time.horizon
    steps = paths.steps
    X = np.empty((paths.path_count, steps + 1, space_time.target_dimension))
    Z = np.empty((paths.path_count, steps + 1) + zfield.values.shape[-2:])
    for k, t in enumerate(paths.times):
        tau = max(horizon - t, 0.0)
        points = paths.base[:, k]
        X[:, k] = space_time.interpolate(tau, points)
        Z[:, k] = zfield.interpolate(tau, points)
    X[:, -1] = np.asarray(space_time.terminal(paths.base[:, -1]), dtype=float).reshape(paths.path_count, -1)
    return BSDESolution(paths.with_solution(X, Z), PDE_ASSEMBLED, space_time.terminal, space_time)


@dataclass
class ResidualSummary:
    """ Distribution over paths of max_k |Euler residual|. """

    per_path: np.ndarray
    median: float
    mean: float
    maximum: float
    quantile_90: float

    def to_dict(self) -> dict:
        return {"median": self.median, "mean": self.mean, "max": self.maximum, "q90": self.quantile_90,
                "paths": int(self.per_path.size)}


def residual_check(solution: BSDESolution, chart: ManifoldChart, drift: DriftField) -> ResidualSummary:
    """ r = max_k |X_{k+1} - X_k - Z_k dW_k - (-1/2 Gamma(X_k)(Z_k, Z_k) + f(B_k, X_k, Z_k)) dt_k| per path. """
    paths = solution.paths
    X, Z, B = paths.X, paths.Z, paths.base
    dt = paths.dt
    X_k, Z_k, B_k = X[:, :-1], Z[:, :-1], B[:, :-1]
    drift_term = drift(B_k, X_k, Z_k)
    if not chart.is_flat:
        gamma = chart.christoffel_batch(X_k, checked=False)
        drift_term = drift_term - 0.5 * np.einsum("pkijl,pkja,pkla->pki", gamma, Z_k, Z_k)
    martingale = np.einsum("pkia,pka->pki", Z_k, paths.increments)
    residual = X[:, 1:] - X_k - martingale - drift_term * dt[None, :, None]
    per_path = np.max(np.linalg.norm(residual, axis=-1), axis=1) if paths.steps else np.zeros(paths.path_count)
    return ResidualSummary(per_path, float(np.median(per_path)), float(np.mean(per_path)), float(np.max(per_path)),
                           float(np.quantile(per_path, 0.9)))


# Least-squares Monte Carlo


def polynomial_exponents(dimension: int, degree: int):
    """ Exponent tuples of all monomials of total degree <= degree. """
    return [e for e in itertools.product(range(degree + 1), repeat=dimension) if sum(e) <= degree]


class RegressionBasis:
    """ Standardised polynomial basis on one time slice; collapses to the constant when the slice is degenerate. """

    def __init__(self, points: np.ndarray, degree: int):
        self.mean = points.mean(axis=0)
        # exact comparison: the std of a repeated float is rounding noise, not zero
        self.varying = ~np.all(points == points[0], axis=0)
        self.degenerate = not bool(np.any(self.varying))
        scale = points.std(axis=0)
        self.scale = np.where(self.varying & (scale > 0), scale, 1.0)
        self.exponents = polynomial_exponents(int(self.varying.sum()), 0 if self.degenerate else degree)
        self.matrix = self.evaluate(points)
        rank = np.linalg.matrix_rank(self.matrix)
        if rank < self.matrix.shape[1]:
            raise BasisError(f"regression matrix has rank {rank} < {self.matrix.shape[1]} basis functions")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        u = ((points - self.mean) / self.scale)[:, self.varying]
        return np.stack([np.prod(u ** np.array(e), axis=1) for e in self.exponents], axis=1)

    def project(self, target: np.ndarray) -> np.ndarray:
        """ Least-squares conditional expectation of each column; constant columns are returned as they are. """
        target = target.reshape(len(target), -1)
        fitted = np.empty_like(target)
        constant = np.ptp(target, axis=0) == 0
        fitted[:, constant] = target[:, constant]
        if np.any(~constant):
            coefficients, *_ = np.linalg.lstsq(self.matrix, target[:, ~constant], rcond=None)
            fitted[:, ~constant] = self.matrix @ coefficients
        return fitted


def lsmc_solve(spec: DiffusionSpec, gamma: Callable, terminal: Callable[[np.ndarray], np.ndarray], y,
               grid: Sequence[float], path_count: int, degree: int = 2, seed: int = 0) -> BSDESolution:
    """ Backward induction X_k = E[X_{k+1} | B_k] + gamma(B_k, X_k, Z_k) dt with Z_k = E[X_{k+1} dW_k^T | B_k] / dt. """
    paths = simulate_diffusion(spec, y, grid, seed, path_count)
    steps = paths.steps
    final = np.asarray(terminal(paths.base[:, -1]), dtype=float).reshape(path_count, -1)
    n, d_w = final.shape[1], spec.noise_dimension
    X = np.empty((path_count, steps + 1, n))
    Z = np.zeros((path_count, steps + 1, n, d_w))
    X[:, -1] = final
    accumulated = np.zeros((path_count, n))
    for k in range(steps - 1, -1, -1):
        dt = paths.times[k + 1] - paths.times[k]
        basis = RegressionBasis(paths.base[:, k], degree)
        following = X[:, k + 1]
        weighted = following[:, :, None] * paths.increments[:, k][:, None, :] / dt
        Z[:, k] = basis.project(weighted).reshape(path_count, n, d_w)
        expected = basis.project(following)
        current = expected
        for iteration in range(PICARD_ITERATIONS):
            update = expected + gamma(paths.base[:, k], current, Z[:, k]) * dt
            change = float(np.max(np.abs(update - current)))
            current = update
            if change <= PICARD_TOLERANCE:
                break
        else:
            raise ConvergenceError(f"Picard iteration at step {k} did not settle (last change {change:.3g})",
                                   PICARD_ITERATIONS, change)
        X[:, k] = current
        accumulated += gamma(paths.base[:, k], current, Z[:, k]) * dt
    Z[:, -1] = Z[:, -2] if steps else 0.0
    pathwise = final + accumulated
    standard_error = float(np.max(np.std(pathwise, axis=0)) / math.sqrt(path_count))
    logger.debug("lsmc X0 = %s (se %s) over %s paths", X[:, 0].mean(axis=0), standard_error, path_count)
    return BSDESolution(paths.with_solution(X, Z), LSMC, terminal, standard_error=standard_error,
                        details={"degree": degree})


# One-dimensional arclength reduction


class Reduction1D:
    """ Arclength coordinates s(x) = int_origin^x sqrt(g) on an interval chart.

    s is tabulated once on ``nodes`` points by adaptive quadrature per segment; between nodes a fixed Gauss-Legendre
    rule finishes the integral, and the inverse is a spline guess polished by Newton steps (ds/dx = sqrt(g)).
    """

    def __init__(self, chart: ManifoldChart, origin: float = 0.0, nodes: int = 1025):
        self.chart = chart
        lo, hi = chart.bounds[0]
        self.origin = float(np.clip(origin, lo, hi))
        self.gl_nodes, self.gl_weights = roots_legendre(20)
        self.table_x = np.linspace(lo, hi, nodes)
        pieces = [integrate.quad(self._speed, a, b, epsabs=1e-14, epsrel=1e-13)[0]
                  for a, b in zip(self.table_x[:-1], self.table_x[1:])]
        self.table_s = np.concatenate([[0.0], np.cumsum(pieces)])
        self.table_s -= self._local(np.array([self.origin]))[0]
        self.guess = CubicSpline(self.table_s, self.table_x)
        self.flat: Optional[ManifoldChart] = None
        self.drift: Optional[DriftField] = None

    def _speed(self, x):
        return float(self.stretch(np.asarray(x, dtype=float)))

    def stretch(self, x) -> np.ndarray:
        """ sqrt(g(x)) = ds/dx """
        x = np.asarray(x, dtype=float)
        return np.sqrt(self.chart.metric(x[..., None])[..., 0, 0])

    def _local(self, x: np.ndarray) -> np.ndarray:
        """ Table value at the nearest node plus the Gauss-Legendre integral from that node to x. """
        j = np.clip(np.rint((x - self.table_x[0]) / (self.table_x[1] - self.table_x[0])).astype(int), 0,
                    len(self.table_x) - 1)
        start = np.asarray(self.table_x[j])
        half = np.asarray(0.5 * (x - start))
        quadrature = self.stretch(start[..., None] + half[..., None] * (self.gl_nodes + 1.0)) @ self.gl_weights
        return self.table_s[j] + half * quadrature

    def arclength(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.chart.bounds[0]
        if np.any((x < lo) | (x > hi)):
            raise DomainError(f"arclength requested outside [{lo}, {hi}]")
        return self._local(x)

    def inverse(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        lo, hi = self.chart.bounds[0]
        x = np.clip(self.guess(s), lo, hi)
        for _ in range(4):
            x = np.clip(x - (self._local(x) - s) / self.stretch(x), lo, hi)
        return x

    def transform_drift(self, drift: DriftField) -> DriftField:
        """ f^(b, s, z^) = sqrt(g(x)) f(b, x, z^ / sqrt(g(x))) with x = x(s). """

        def evaluator(b, s, z):
            x = self.inverse(np.asarray(s)[..., 0])[..., None]
            stretch = self.stretch(x[..., 0])
            return stretch[..., None] * drift(b, x, np.asarray(z) / stretch[..., None, None])

        return DriftField(evaluator, 1, drift.z_dependent, drift.lipschitz, drift.bound, None,
                          f"{drift.name}@arclength", description={**drift.description, "reduced": True})

    def transform_terminal(self, terminal: Callable) -> Callable:
        return lambda points: self.arclength(np.asarray(terminal(points))[..., 0])[..., None]

    def map_back(self, s: np.ndarray) -> np.ndarray:
        return self.inverse(np.asarray(s)[..., 0])[..., None]


def reduce_1d(chart: ManifoldChart, drift: Optional[DriftField] = None, origin: float = 0.0,
              sample_count: int = 257) -> Reduction1D:
    """ Arclength reduction of a one-dimensional chart, with the drift transported by the chain rule. """
    if chart.dimension != 1:
        raise DimensionError("arclength reduction needs a one-dimensional target")
    lo, hi = chart.bounds[0]
    samples = np.linspace(lo, hi, sample_count)
    g = chart.metric(samples[:, None])[:, 0, 0]
    if not np.all(g > 0):
        raise MetricError(f"metric is not positive at x = {samples[np.argmin(g)]:g}")
    reduction = Reduction1D(chart, origin)
    s_lo, s_hi = reduction.arclength(np.array([lo, hi]))
    reduction.flat = interval_chart(lambda x: np.ones(np.shape(x)), (s_lo, s_hi), lambda x: np.zeros(np.shape(x)),
                                    arclength=lambda x: x, name=f"{chart.name}@arclength")
    reduction.flat.is_flat = True
    if drift is not None:
        reduction.drift = reduction.transform_drift(drift)
    return reduction
