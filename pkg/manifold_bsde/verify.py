# -*- coding: utf-8 -*-
"""Numerical verification

Sampled checks of the inequalities the existence and uniqueness arguments rest on. Every check returns a
``VerificationReport`` whose worst-case margin is signed (negative is a violation); constants that are only known
to exist are fitted on one sample, frozen, and re-checked on a fresh sample of the same size.

Notes
-----
Conditional expectations in the submartingale tests come from degree-2 polynomial regression on the base state
rather than nested simulation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import LOGGER_NAME
from .bsde import BSDESolution, RegressionBasis
from .convexity import PHI_MAX, PHI_MIN, ConvexDomain, SeparatingFunction, alpha_for_ball, integrability_phi_batch
from .drift import DriftField, TruncationParams, lipschitz_probe, mollify
from .forward import DiffusionSpec
from .geometry import (
    ManifoldChart,
    distance_batch,
    log_map,
    manifold_hessian_batch,
    parallel_transport,
    product_chart,
    riemannian_norm_batch,
    sample_box,
)
from .pdesolver import SpaceTimeField, gradient_field
from .settings import run_setting, verify_setting
from .utilities.errors import ConfigError, DomainError, ParameterError, PreconditionError, StatisticsError
from .utilities.reports import VerificationReport, worst
from .utilities.utils import batched_gradient, directional_difference, directional_second_difference, parallel_map

logger = logging.getLogger(LOGGER_NAME + ".verify")

__all__ = [
    "VerificationReport",
    "SubmartingaleParams",
    "FittedConstant",
    "ito_drift_positivity",
    "fit_lambda_mu",
    "submartingale_mc",
    "drift_submartingale_check",
    "contraction_curve",
    "exp_integrability",
    "hessian_inequality_suite",
    "transport_inequality_suite",
    "outwardness_check",
    "dpsi_drift_bound",
    "doob_monotonicity",
    "small_drift_check",
    "mollifier_consistency",
]

MIN_PATHS = 1000
QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9)
HESSIAN_STEP = 2e-3
MOLLIFIER_LEVELS = (25, 50, 100)
LIPSCHITZ_SPREAD = 0.1
RATE_GROWTH = 2.0


@dataclass
class SubmartingaleParams:
    """ Exponents of A_t = lambda t + mu int (||Z||_r + ||Z'||_r) ds. """

    lam: float = 0.0
    mu: float = 0.0
    cells: int = 4

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.mu)) or self.lam < 0 or self.mu < 0:
            raise ParameterError(f"lambda and mu must be finite and nonnegative, got ({self.lam}, {self.mu})")
        if self.cells < 1:
            raise ParameterError("partition needs at least one cell")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "mu": self.mu, "cells": self.cells}


@dataclass
class FittedConstant:
    """ Constant fitted on a calibration sample and re-checked on a fresh one of the same size. """

    value: float
    doubled: float
    band: float

    @property
    def relative_change(self) -> float:
        if self.value == 0:
            return 0.0 if self.doubled == 0 else np.inf
        return (self.doubled - self.value) / self.value

    @property
    def margin(self) -> float:
        return self.band - self.relative_change

    @property
    def stable(self) -> bool:
        return bool(np.isfinite(self.value) and self.relative_change <= self.band)

    @classmethod
    def from_samples(cls, calibration: np.ndarray, fresh: np.ndarray, band: float) -> "FittedConstant":
        value = float(np.max(calibration, initial=0.0))
        return cls(value, float(max(value, np.max(fresh, initial=0.0))), band)

    def report(self, name: str, sample_size: int, **details) -> VerificationReport:
        return VerificationReport(name, sample_size, self.margin, 0.0,
                                  details={"C": self.value, "C_doubled": self.doubled, **details})


def fit_then_freeze(ratios: Callable[[int], np.ndarray], seed: int) -> FittedConstant:
    """ ratios(seed) -> per-sample quotients; C is their max on one sample, compared with the max over two. """
    calibration = np.asarray(ratios(seed), dtype=float)
    fresh = np.asarray(ratios(seed + 1), dtype=float)
    return FittedConstant.from_samples(calibration, fresh, verify_setting("stability_band", 0.2))


# Ito drift of e^{A} Psi along two solutions


def _grid_sample(space_time: SpaceTimeField, limit: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """ (level index, flat node index) pairs, at most ``limit`` of them. """
    levels = len(space_time.times)
    nodes = int(np.prod(space_time.values.shape[1:-1]))
    total = levels * nodes
    chosen = np.arange(total) if total <= limit else np.sort(np.random.default_rng(seed).choice(total, limit, replace=False))
    return chosen // nodes, chosen % nodes


def _paired_states(field1: SpaceTimeField, field2: SpaceTimeField, spec: DiffusionSpec, limit: int, seed: int):
    if field1.values.shape != field2.values.shape or not np.allclose(field1.times, field2.times):
        raise ConfigError("the two fields must share their space-time grid")
    z1, z2 = gradient_field(field1, spec), gradient_field(field2, spec)
    level, node = _grid_sample(field1, limit, seed)
    n = field1.target_dimension
    d = field1.base_dimension
    points = field1.points.reshape(-1, d)[node]
    X = field1.values.reshape(len(field1.times), -1, n)[level, node]
    Xp = field2.values.reshape(len(field2.times), -1, n)[level, node]
    shape = z1.values.shape[-2:]
    Z = z1.values.reshape((len(field1.times), -1) + shape)[level, node]
    Zp = z2.values.reshape((len(field2.times), -1) + shape)[level, node]
    return points, X, Xp, Z, Zp


def _ito_terms(psi: SeparatingFunction, drift: DriftField, b, X, Xp, Z, Zp):
    """ (1/2 Hess Psi(Z~, Z~), D Psi . (f, f'), Psi, ||Z||_r + ||Z'||_r) on the product chart. """
    chart = psi.domain.chart
    product = product_chart(chart)
    Y = np.hstack([X, Xp])
    stacked = np.concatenate([Z, Zp], axis=1)
    hess = manifold_hessian_batch(product, psi.on_product, Y, HESSIAN_STEP)
    quadratic = 0.5 * np.einsum("mia,mij,mja->m", stacked, hess, stacked)
    gradient = batched_gradient(psi.on_product, Y, 1e-5)
    pairing = np.einsum("mi,mi->m", gradient, np.hstack([drift(b, X, Z), drift(b, Xp, Zp)]))
    norms = riemannian_norm_batch(chart, X, Z) + riemannian_norm_batch(chart, Xp, Zp)
    return quadratic, pairing, psi.on_product(Y), norms


def _random_z(rng: np.random.Generator, count: int, n: int, d_w: int, cap: float) -> np.ndarray:
    z = rng.standard_normal((count, n, d_w))
    return z * (cap * rng.random(count) / np.linalg.norm(z, axis=(1, 2)))[:, None, None]


def ito_drift_positivity(field1: SpaceTimeField, field2: SpaceTimeField, psi: SeparatingFunction, drift: DriftField,
                         params: SubmartingaleParams, spec: DiffusionSpec, limit: int = 2000, seed: int = 0,
                         z_sweep: int = 0, epsilon: Optional[float] = None) -> VerificationReport:
    """ 1/2 Hess Psi(Z~, Z~) + D Psi.(f, f') + (lambda + mu(||Z||_r + ||Z'||_r)) Psi >= 0 over grid points.

    ``z_sweep`` extra random (z, z') per sampled state with ||z|| <= 1/epsilon extend the check beyond realised Z.
    """
    chart = psi.domain.chart
    if field1.target_dimension != chart.dimension:
        raise ConfigError(f"fields take values in R^{field1.target_dimension}, Psi lives on a {chart.dimension}-chart")
    b, X, Xp, Z, Zp = _paired_states(field1, field2, spec, limit, seed)
    if z_sweep:
        if epsilon is None:
            raise ParameterError("a random-z sweep needs epsilon")
        rng = np.random.default_rng(seed + 7)
        repeat = np.repeat(np.arange(len(X)), z_sweep)
        count, d_w = len(repeat), Z.shape[-1]
        b, X, Xp = np.vstack([b, b[repeat]]), np.vstack([X, X[repeat]]), np.vstack([Xp, Xp[repeat]])
        Z = np.concatenate([Z, _random_z(rng, count, chart.dimension, d_w, 1.0 / epsilon)])
        Zp = np.concatenate([Zp, _random_z(rng, count, chart.dimension, d_w, 1.0 / epsilon)])
    quadratic, pairing, value, norms = _ito_terms(psi, drift, b, X, Xp, Z, Zp)
    margins = quadratic + pairing + (params.lam + params.mu * norms) * value
    return worst("ito-drift-positivity", margins, np.hstack([b, X, Xp]), 1e-6, **params.to_dict(),
                 z_sweep=z_sweep)


def fit_lambda_mu(field1: SpaceTimeField, field2: SpaceTimeField, psi: SeparatingFunction, drift: DriftField,
                  spec: DiffusionSpec, mode: str = "bounded", limit: int = 2000, transport_limit: int = 200,
                  seed: int = 0) -> SubmartingaleParams:
    """ lambda (and mu) large enough for the Ito drift to be nonnegative.

    ``bounded``: z-independent drift, lambda = 2 max |D Psi.(f, f')| / Psi and mu = 0.
    ``z-dependent``: C = max (|D Psi.(f, f')| - 1/4 ||P z - z'||_r^2) / (delta^2 (1 + ||z||_r + ||z'||_r)) over
    at most ``transport_limit`` states, then lambda = mu = 2C.
    """
    chart = psi.domain.chart
    b, X, Xp, Z, Zp = _paired_states(field1, field2, spec, limit, seed)
    Y = np.hstack([X, Xp])
    value = psi.on_product(Y)
    keep = value > 1e-12
    if not np.any(keep):
        return SubmartingaleParams(0.0, 0.0)
    gradient = batched_gradient(psi.on_product, Y[keep], 1e-5)
    pairing = np.abs(np.einsum("mi,mi->m", gradient,
                               np.hstack([drift(b[keep], X[keep], Z[keep]), drift(b[keep], Xp[keep], Zp[keep])])))
    if mode == "bounded":
        return SubmartingaleParams(2.0 * float(np.max(pairing / value[keep])), 0.0)
    if mode != "z-dependent":
        raise ConfigError(f"unknown fit mode '{mode}'")
    index = np.flatnonzero(keep)
    if len(index) > transport_limit:
        chosen = np.random.default_rng(seed).choice(len(index), transport_limit, replace=False)
    else:
        chosen = np.arange(len(index))
    rows = index[chosen]

    def gap(i):
        moved = parallel_transport(chart, X[i], Xp[i], Z[i])
        return moved - Zp[i]

    gaps = np.asarray(parallel_map(gap, list(rows), run_setting("workers", 1)))
    transported = riemannian_norm_batch(chart, Xp[rows], gaps) ** 2
    dist = distance_batch(chart, X[rows], Xp[rows])
    norms = riemannian_norm_batch(chart, X[rows], Z[rows]) + riemannian_norm_batch(chart, Xp[rows], Zp[rows])
    constant = np.max((pairing[chosen] - 0.25 * transported) / (dist ** 2 * (1.0 + norms)))
    constant = max(float(constant), 0.0)
    return SubmartingaleParams(2.0 * constant, 2.0 * constant)


# Submartingale tests


def _cell_bounds(steps: int, cells: int) -> List[Tuple[int, int]]:
    edges = np.unique(np.linspace(0, steps, cells + 1).round().astype(int))
    return list(zip(edges[:-1], edges[1:]))


def _quantile_nodes(points: np.ndarray) -> np.ndarray:
    return np.quantile(points, QUANTILES, axis=0)


def submartingale_mc(process: np.ndarray, base: np.ndarray, compensator: Optional[np.ndarray] = None,
                     cells: int = 4, degree: int = 2, name: str = "submartingale") -> VerificationReport:
    """ Regressed conditional increments of process - compensator must be >= -(3 SE + bias tolerance).

    process and compensator are (P, N+1); base is (P, N+1, d).
    """
    process = np.asarray(process, dtype=float)
    paths, columns = process.shape
    if paths < MIN_PATHS:
        raise StatisticsError(f"submartingale test needs at least {MIN_PATHS} paths, got {paths}")
    adjusted = process if compensator is None else process - np.asarray(compensator, dtype=float)
    tolerance = verify_setting("bias_tolerance", 1e-3)
    margins, witnesses = [], []
    for start, stop in _cell_bounds(columns - 1, cells):
        increment = adjusted[:, stop] - adjusted[:, start]
        basis = RegressionBasis(base[:, start], degree)
        design = basis.matrix
        coefficients, *_ = np.linalg.lstsq(design, increment, rcond=None)
        residual = increment - design @ coefficients
        dof = max(1, paths - design.shape[1])
        variance = float(residual @ residual) / dof
        inverse = np.linalg.pinv(design.T @ design)
        nodes = _quantile_nodes(base[:, start])
        features = basis.evaluate(nodes)
        fitted = features @ coefficients
        se = np.sqrt(np.maximum(np.einsum("qi,ij,qj->q", features, inverse, features) * variance, 0.0))
        margins.append(fitted + 3.0 * se)
        witnesses.append(np.column_stack([np.full(len(nodes), start), nodes]))
    return worst(name, np.concatenate(margins), np.vstack(witnesses), tolerance, cells=cells)


def drift_submartingale_check(solution: BSDESolution, xi: Callable[[np.ndarray], np.ndarray], drift: DriftField,
                              cells: int = 4) -> VerificationReport:
    """ xi(X_t) - int D xi(X_s).f(B_s, X_s, Z_s) ds is a submartingale for convex xi. """
    paths = solution.paths
    X, Z, B = paths.X, paths.Z, paths.base
    p, columns, n = X.shape
    flat = X.reshape(-1, n)
    values = xi(flat).reshape(p, columns)
    slopes = batched_gradient(xi, flat, 1e-6).reshape(p, columns, n)
    rates = np.einsum("pki,pki->pk", slopes, drift(B, X, Z))
    compensator = np.zeros((p, columns))
    compensator[:, 1:] = np.cumsum(rates[:, :-1] * paths.dt[None, :], axis=1)
    return submartingale_mc(values, B, compensator, cells, name="drift-submartingale")


# Contraction, integrability and Doob consistency


@dataclass
class ContractionTable:
    """ delta1 = sqrt E delta^2(U, U'), delta2 = sqrt E sup_t delta^2(X_t, X'_t) per perturbation size. """

    etas: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    exponent: float
    bound_exponent: float

    @property
    def monotone(self) -> bool:
        order = np.argsort(self.delta1)
        return bool(np.all(np.diff(self.delta2[order]) >= -1e-12))

    def rows(self) -> np.ndarray:
        return np.column_stack([self.etas, self.delta1, self.delta2])

    def to_dict(self) -> dict:
        return {"eta": self.etas.tolist(), "delta1": self.delta1.tolist(), "delta2": self.delta2.tolist(),
                "exponent": self.exponent, "bound_exponent": self.bound_exponent, "monotone": self.monotone}


def contraction_curve(solve: Callable[[Callable], BSDESolution], terminal: Callable, perturb: Callable,
                      etas: Sequence[float], chart: ManifoldChart, p: int = 2) -> ContractionTable:
    """ Solve for F and F'_eta with shared noise (``solve`` must reuse its seed) and tabulate both distances. """
    reference = solve(terminal)
    X = reference.X
    delta1, delta2 = [], []
    for eta in etas:
        other = solve(perturb(terminal, eta))
        dist = distance_batch(chart, X, other.X)
        delta1.append(math.sqrt(float(np.mean(dist[:, -1] ** 2))))
        delta2.append(math.sqrt(float(np.mean(np.max(dist ** 2, axis=1)))))
    delta1, delta2 = np.asarray(delta1), np.asarray(delta2)
    positive = (delta1 > 0) & (delta2 > 0)
    exponent = float("nan")
    if positive.sum() >= 2:
        exponent = float(np.polyfit(np.log(delta1[positive]), np.log(delta2[positive]), 1)[0])
    return ContractionTable(np.asarray(etas, dtype=float), delta1, delta2, exponent, 1.0 / (2.0 * p))


@dataclass
class IntegrabilityEstimate:
    """ Monte Carlo mean of exp(alpha int ||Z||_r^2 ds) with the comparison bound when one applies. """

    estimate: float
    standard_error: float
    alpha: float
    bound: Optional[float] = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> Optional[bool]:
        if self.bound is None:
            return None
        return bool(self.estimate <= self.bound)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "standard_error": self.standard_error, "alpha": self.alpha,
                "bound": self.bound, "passed": self.passed, **self.details}


def exp_integrability(solution: BSDESolution, alpha: float, chart: ManifoldChart,
                      domain: Optional[ConvexDomain] = None, drift: Optional[DriftField] = None) -> IntegrabilityEstimate:
    """ E exp(alpha int_0^T ||Z||_r^2 ds) by left Riemann sums along the paths.

    On a geodesic ball with alpha below alpha_for_ball(rho), the bound (C_max / C_min) exp(C T) applies, where C is
    the sampled max of |D phi . f| / C_min - slack ||Z||_r^2 and slack = alpha_for_ball(rho) - alpha.
    """
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    paths = solution.paths
    X, Z = paths.X[:, :-1], paths.Z[:, :-1]
    squared = riemannian_norm_batch(chart, X, Z) ** 2
    integral = np.sum(squared * paths.dt[None, :], axis=1)
    with np.errstate(over="ignore"):
        samples = np.exp(alpha * integral)
    estimate = float(np.mean(samples))
    se = float(np.std(samples) / math.sqrt(len(samples))) if np.isfinite(estimate) else float("inf")
    if not np.isfinite(estimate):
        logger.warning("exponential moment overflowed for alpha=%s", alpha)
    if domain is None or not domain.is_ball:
        return IntegrabilityEstimate(estimate, se, alpha)
    slack = alpha_for_ball(domain.radius) - alpha
    if slack <= 0:
        return IntegrabilityEstimate(estimate, se, alpha, details={"slack": slack})
    correction = 0.0
    if drift is not None:
        flat_x = X.reshape(-1, chart.dimension)
        slope = batched_gradient(lambda y: integrability_phi_batch(domain, y), flat_x, 1e-6)
        rate = np.abs(np.einsum("mi,mi->m", slope, drift(paths.base[:, :-1], X, Z).reshape(-1, chart.dimension)))
        correction = max(0.0, float(np.max(rate / PHI_MIN - slack * squared.reshape(-1))))
    bound = PHI_MAX / PHI_MIN * math.exp(correction * paths.horizon)
    return IntegrabilityEstimate(estimate, se, alpha, bound, {"slack": slack, "C_slack": correction})


def _exponent_weight(solution: BSDESolution, other: BSDESolution, chart: ManifoldChart,
                     params: SubmartingaleParams) -> np.ndarray:
    """ A_t on the time grid, (P, N+1). """
    paths = solution.paths
    norms = (riemannian_norm_batch(chart, solution.X, solution.Z)
             + riemannian_norm_batch(chart, other.X, other.Z))[:, :-1]
    accumulated = np.zeros((paths.path_count, paths.steps + 1))
    accumulated[:, 1:] = np.cumsum(norms * paths.dt[None, :], axis=1)
    return params.lam * paths.times[None, :] + params.mu * accumulated


def doob_monotonicity(solution: BSDESolution, other: BSDESolution, psi: SeparatingFunction,
                      params: SubmartingaleParams, checkpoints: int = 8) -> VerificationReport:
    """ Sampled means of e^{A_t} Psi(X_t, X'_t) are nondecreasing in t within 3 SE. """
    chart = psi.domain.chart
    weight = np.exp(_exponent_weight(solution, other, chart, params))
    values = weight * psi(solution.X, other.X)
    columns = np.unique(np.linspace(0, solution.paths.steps, checkpoints + 1).round().astype(int))
    differences = np.diff(values[:, columns], axis=1)
    means = differences.mean(axis=0)
    se = differences.std(axis=0) / math.sqrt(len(differences))
    witnesses = solution.paths.times[columns[1:]][:, None]
    return worst("doob-monotonicity", means + 3.0 * se, witnesses, verify_setting("bias_tolerance", 1e-3),
                 **params.to_dict())


def small_drift_check(drift: DriftField, exit_rate: float, theta: Optional[float] = None) -> VerificationReport:
    """ L < theta rho and L2 < theta rho for the declared drift constants. """
    theta = verify_setting("small_drift_theta", 0.1) if theta is None else theta
    if drift.lipschitz is None or drift.bound is None:
        raise PreconditionError("small-drift check needs declared L and L2")
    limit = theta * exit_rate
    margin = min(limit - drift.lipschitz, limit - drift.bound)
    return VerificationReport("small-drift", 1, margin, 0.0, [drift.lipschitz, drift.bound],
                              {"theta": theta, "exit_rate": exit_rate, "limit": limit})


# Geometric inequality suites


def _pair_sample(chart: ManifoldChart, count: int, seed: int, box: Optional[np.ndarray] = None,
                 diagonal_fraction: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    """ Pairs inside ``box`` within the chart's safe radius; a fraction of them coincide. """
    rng = np.random.default_rng(seed)
    first, second = [], []
    while sum(len(f) for f in first) < count:
        x, y = sample_box(chart, rng, 2 * count, box), sample_box(chart, rng, 2 * count, box)
        keep = distance_batch(chart, x, y) < chart.safe_radius
        first.append(x[keep])
        second.append(y[keep])
    x, y = np.vstack(first)[:count], np.vstack(second)[:count]
    diagonal = rng.random(count) < diagonal_fraction
    y[diagonal] = x[diagonal]
    return x, y


def _tangent_basis(chart: ManifoldChart, points: np.ndarray, velocity: np.ndarray, u: np.ndarray):
    """ Split u into its component along velocity (in g at points) and the orthogonal rest. """
    g = chart.metric(points)
    along = np.einsum("mi,mij,mj->m", u, g, velocity) / np.einsum("mi,mij,mj->m", velocity, g, velocity)
    tangential = along[:, None] * velocity
    return tangential, u - tangential


def hessian_inequality_suite(chart: ManifoldChart, x: np.ndarray, x_prime: np.ndarray, u: np.ndarray,
                             tolerance: float = 1e-4, step: float = HESSIAN_STEP) -> VerificationReport:
    """ Distance derivative identity and Hessian lower bounds for pairs (x, x') and product vectors u = (u0, u1).

    Checks |delta'<u>| = |P v0 - v1|_r, Hess delta<u,u> >= |P w0 - w1|_r^2 / delta and
    Hess(delta^2 / 2)<u,u> >= |P u0 - u1|_r^2, with P the transport from x to x' along the geodesic and (v, w)
    the tangential and orthogonal parts. The two Hessian bounds need nonpositive curvature.
    """
    x, x_prime, u = np.atleast_2d(x), np.atleast_2d(x_prime), np.atleast_2d(u)
    n = chart.dimension
    dist = distance_batch(chart, x, x_prime)
    if np.any(dist < 1e-10):
        raise PreconditionError("distance-derivative checks need distinct points")
    u0, u1 = u[:, :n], u[:, n:]
    product = product_chart(chart)
    Y = np.hstack([x, x_prime])

    def delta(points):
        return distance_batch(chart, points[..., :n], points[..., n:])

    def half_squared(points):
        return 0.5 * delta(points) ** 2

    start = np.array([log_map(chart, a, b) for a, b in zip(x, x_prime)])
    end = -np.array([log_map(chart, b, a) for a, b in zip(x, x_prime)])
    v0, w0 = _tangent_basis(chart, x, start, u0)
    v1, w1 = _tangent_basis(chart, x_prime, end, u1)

    def moved(i):
        return parallel_transport(chart, x[i], x_prime[i], np.column_stack([v0[i], w0[i], u0[i]]))

    transported = np.asarray(parallel_map(moved, range(len(x)), run_setting("workers", 1)))
    pv, pw, pu = transported[:, :, 0], transported[:, :, 1], transported[:, :, 2]
    first = np.abs(directional_difference(delta, Y, u, 1e-6))
    der1 = riemannian_norm_batch(chart, x_prime, (pv - v1)[:, :, None])
    margins = {"derivative": tolerance - np.abs(first - der1)}
    details = {}
    if chart.hadamard:
        hess_delta = _hessian_pairing(product, delta, Y, u, step)
        hess_half = _hessian_pairing(product, half_squared, Y, u, step)
        bound_w = riemannian_norm_batch(chart, x_prime, (pw - w1)[:, :, None]) ** 2 / dist
        bound_u = riemannian_norm_batch(chart, x_prime, (pu - u1)[:, :, None]) ** 2
        margins["distance-hessian"] = hess_delta - bound_w
        margins["half-squared-hessian"] = hess_half - bound_u
    else:
        details["skipped"] = ["distance-hessian", "half-squared-hessian"]
    reports = {key: worst(key, value, np.hstack([x, x_prime, u]), tolerance) for key, value in margins.items()}
    combined = min(reports.values(), key=lambda r: r.margin)
    details.update({key: r.to_dict() for key, r in reports.items()})
    return VerificationReport("hessian-inequalities", len(x), combined.margin, tolerance, combined.witness, details)


def _hessian_pairing(chart: ManifoldChart, fn: Callable, points: np.ndarray, u: np.ndarray, step: float) -> np.ndarray:
    """ Hess fn<u,u> = d^2/ds^2 fn(y + s u) - Gamma(u, u) . dfn """
    second = directional_second_difference(fn, points, u, step)
    if chart.is_flat:
        return second
    gradient = batched_gradient(fn, points, step)
    gamma = chart.christoffel_batch(points)
    return second - np.einsum("mljk,mj,mk,ml->m", gamma, u, u, gradient)


def transport_inequality_suite(chart: ManifoldChart, count: int = 200, seed: int = 0,
                               box: Optional[np.ndarray] = None, columns: int = 1) -> VerificationReport:
    """ Smallest C with |P z - z'|_r <= C(|z - z'| + delta(|z| + |z'|)) and
    |z - z'| <= C(|P z - z'|_r + delta(|z|_r + |z'|_r)), fitted then re-checked on a fresh sample. The
    displacement bound |P z - z| <= C delta |z| is fitted the same way; the margin is the smaller of the two.
    """
    n = chart.dimension
    moved_by = {}

    def ratios(sample_seed):
        x, y = _pair_sample(chart, count, sample_seed, box)
        rng = np.random.default_rng(sample_seed + 101)
        z = rng.standard_normal((count, n, columns))
        z2 = z + rng.standard_normal((count, n, columns)) * rng.choice([1e-3, 0.1, 1.0], count)[:, None, None]

        def moved(i):
            return parallel_transport(chart, x[i], y[i], z[i])

        pz = np.asarray(parallel_map(moved, range(count), run_setting("workers", 1)))
        dist = distance_batch(chart, x, y)
        euclid = np.linalg.norm(z - z2, axis=(1, 2))
        plain = np.linalg.norm(z, axis=(1, 2)) + np.linalg.norm(z2, axis=(1, 2))
        riem = riemannian_norm_batch(chart, x, z) + riemannian_norm_batch(chart, y, z2)
        gap = riemannian_norm_batch(chart, y, pz - z2)
        first = gap / (euclid + dist * plain)
        second = euclid / (gap + dist * riem)
        distinct = dist > 1e-12
        moved_by[sample_seed] = (np.linalg.norm(pz - z, axis=(1, 2))[distinct]
                                 / (dist[distinct] * np.linalg.norm(z, axis=(1, 2))[distinct]))
        return np.maximum(first, second)

    fitted = fit_then_freeze(ratios, seed)
    # |P z - z| <= C delta |z|, fitted and re-checked the same way
    moved = FittedConstant.from_samples(moved_by[seed], moved_by[seed + 1], fitted.band)
    return VerificationReport("transport-inequalities", 2 * count, min(fitted.margin, moved.margin), 0.0,
                              details={"C": fitted.value, "C_doubled": fitted.doubled, "tp3_ratio": moved.value,
                                       "tp3_doubled": moved.doubled, "stable": fitted.stable and moved.stable})


@dataclass
class OutwardnessResult:
    """ inf over boundary samples of Dchi(x) . f(b, x, z) and the resulting classification. """

    infimum: float
    classification: str
    zeta: Optional[float]
    witness: List[float]
    sample_size: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def outwardness_check(domain: ConvexDomain, drift: DriftField, z_cap: float, count: int = 256, seed: int = 0,
                      base_box: Optional[np.ndarray] = None, noise_dimension: int = 1) -> OutwardnessResult:
    """ Classify the drift as strictly outward (H_s), outward (H) or neither on {chi = c}. """
    if count <= 0:
        raise DomainError("empty boundary sample")
    rng = np.random.default_rng(seed)
    boundary = domain.boundary_sample(rng, count)
    base_box = np.array([[-1.0, 1.0]]) if base_box is None else np.atleast_2d(base_box)
    b = base_box[:, 0] + (base_box[:, 1] - base_box[:, 0]) * rng.random((count, base_box.shape[0]))
    z = _random_z(rng, count, domain.chart.dimension, noise_dimension, z_cap)
    pairing = np.einsum("mi,mi->m", domain.chi_gradient(boundary), drift(b, boundary, z))
    index = int(np.argmin(pairing))
    infimum = float(pairing[index])
    if infimum > 1e-6:
        classification, zeta = "H_s", infimum
    elif infimum >= -1e-6:
        classification, zeta = "H", None
    else:
        classification, zeta = "none", None
    logger.debug("outwardness of %s on %s: inf %s (%s)", drift.name, domain.name, infimum, classification)
    return OutwardnessResult(infimum, classification, zeta, boundary[index].tolist(), count)


def dpsi_drift_bound(psi: SeparatingFunction, drift: DriftField, count: int = 500, seed: int = 0,
                     base_dimension: int = 1, noise_dimension: int = 1, z_cap: float = 1.0) -> VerificationReport:
    """ Smallest C with |D Psi.(f, f')| <= C delta^{nu-1}(delta |f'| + |f - f'|), fitted then re-checked. """
    domain = psi.domain
    n = domain.chart.dimension

    def ratios(sample_seed):
        rng = np.random.default_rng(sample_seed)
        x, y = domain.sample(rng, count), domain.sample(rng, count)
        b = rng.uniform(-1.0, 1.0, (count, base_dimension))
        z, z2 = _random_z(rng, count, n, noise_dimension, z_cap), _random_z(rng, count, n, noise_dimension, z_cap)
        f, f2 = drift(b, x, z), drift(b, y, z2)
        Y = np.hstack([x, y])
        lhs = np.abs(np.einsum("mi,mi->m", batched_gradient(psi.on_product, Y, 1e-6), np.hstack([f, f2])))
        dist = distance_batch(domain.chart, x, y)
        rhs = dist ** (psi.nu - 1) * (dist * np.linalg.norm(f2, axis=1) + np.linalg.norm(f - f2, axis=1))
        keep = rhs > 1e-12
        return lhs[keep] / rhs[keep]

    fitted = fit_then_freeze(ratios, seed)
    return fitted.report("dpsi-drift-bound", 2 * count, nu=psi.nu, stable=fitted.stable)


# Mollified drifts g_l as l grows


def mollifier_consistency(drift: DriftField, domain: ConvexDomain, params: TruncationParams,
                          solve: Optional[Callable[[DriftField], BSDESolution]] = None,
                          levels: Sequence[int] = MOLLIFIER_LEVELS, base_dimension: int = 1,
                          noise_dimension: int = 1, sample_count: int = 200, seed: int = 0,
                          box: Optional[np.ndarray] = None) -> VerificationReport:
    """ g_l over increasing l: L' of g_l within 10% of its smallest value, l sup |f_l - f| not growing past twice
    its first value, and (with ``solve``, which must reuse its noise) shrinking distances between consecutive solves.

    sup |f_l - f| is taken over the domain centre and a uniform sample of ``box``.
    """
    levels = sorted(int(level) for level in levels)
    if len(levels) < 2 or levels[0] < 1:
        raise ParameterError(f"need at least two positive mollifier levels, got {levels}")
    if solve is not None and len(levels) < 3:
        raise ParameterError("comparing consecutive solves needs three mollifier levels")
    n = domain.chart.dimension
    box = np.array([[-1.0, 1.0]] * n) if box is None else np.atleast_2d(np.asarray(box, dtype=float))
    rng = np.random.default_rng(seed)
    x = np.vstack([domain.center[None, :], box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((sample_count, n))])
    b = rng.uniform(-1.0, 1.0, (len(x), base_dimension))
    z = _random_z(rng, len(x), n, noise_dimension, 1.0)
    exact = drift(b, x, z)

    results, lipschitz, rates = [], [], []
    for level in levels:
        result = mollify(drift, level, domain, params, base_dimension, noise_dimension, seed=seed)
        results.append(result)
        lipschitz.append(lipschitz_probe(result.drift, sample_count, box, base_dimension, noise_dimension,
                                         seed=seed).lipschitz)
        smooth = result.drift(b, x, z) - (result.shift / level) * (x - domain.center)
        rates.append(level * float(np.max(np.linalg.norm(smooth - exact, axis=1))))
    if min(lipschitz) > 0:
        spread = max(lipschitz) / min(lipschitz) - 1.0
    else:
        spread = 0.0 if max(lipschitz) == 0 else np.inf
    growth = max(rates) / max(rates[0], 1e-12)
    margins = [LIPSCHITZ_SPREAD - spread, RATE_GROWTH - growth]
    details = {"levels": levels, "lipschitz": lipschitz, "rates": rates, "shifts": [r.shift for r in results],
               "lipschitz_spread": spread, "rate_growth": growth}

    if solve is not None:
        solutions = [solve(result.drift).X for result in results]
        distances = [math.sqrt(float(np.mean(distance_batch(domain.chart, first, second) ** 2)))
                     for first, second in zip(solutions, solutions[1:])]
        for before, after in zip(distances, distances[1:]):
            if before > 0:
                margins.append(1.0 - after / before)
            else:
                margins.append(0.0 if after == 0 else -np.inf)
        details["distances"] = distances
    logger.debug("mollifier consistency over l=%s: spread %s, growth %s", levels, spread, growth)
    return VerificationReport("mollifier", len(levels) * len(x), float(min(margins)), 0.0, details=details)
