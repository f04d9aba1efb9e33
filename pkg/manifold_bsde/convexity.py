# -*- coding: utf-8 -*-
"""Convex domains and separating functions

A working domain is a sublevel set {chi <= c} of a convex function inside a chart. On such a domain the library
needs a separating function Psi on domain x domain, either half the squared distance (nonpositive curvature) or
Kendall's function on a regular geodesic ball, plus the cosine profile phi used for exponential integrability.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from . import LOGGER_NAME
from .geometry import (
    ManifoldChart,
    distance_batch,
    expression_function,
    geodesic_shoot,
    manifold_hessian_batch,
    riemannian_norm_batch,
)
from .utilities.errors import ConfigError, DomainError, ParameterError, PreconditionError
from .utilities.reports import VerificationReport, worst

logger = logging.getLogger(LOGGER_NAME + ".convexity")

HALF_DISTANCE_SQUARED = "half-distance-squared"
KENDALL = "kendall"
PHI_MIN = 0.5  # C_min = cos(pi/3)
PHI_MAX = 1.0
DOMAIN_KEYS = {"chi", "level", "center", "ball", "strictness", "collar"}


@dataclass
class ConvexDomain:
    """ omega = {chi <= level} inside a chart, with an interior reference point. """

    chart: ManifoldChart
    chi: Callable[[np.ndarray], np.ndarray]
    level: float
    center: np.ndarray
    radius: Optional[float] = None
    strictness: float = 0.0
    name: str = "domain"
    collar: Optional[float] = None
    _box: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(self.chart.dimension)
        self.level = float(self.level)
        if not self.chart.contains(self.center):
            raise ConfigError(f"domain centre {self.center.tolist()} outside chart '{self.chart.name}'")
        if float(self.chi(self.center[None, :])[0]) > self.level:
            raise ConfigError(f"domain '{self.name}' is empty at its centre (chi > level)")
        if self.radius is not None and self.chart.curvature_bound > 0:
            if self.radius * np.sqrt(self.chart.curvature_bound) >= np.pi / 2:
                raise ParameterError(
                    f"ball radius {self.radius} violates rho*sqrt(K) < pi/2 for K={self.chart.curvature_bound}"
                )
        if self.collar is not None and self.collar <= self.level:
            raise ConfigError(f"collar level {self.collar} must exceed domain level {self.level}")

    @property
    def is_ball(self) -> bool:
        return self.radius is not None

    def chi_values(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.asarray(self.chi(points), dtype=float)

    def contains(self, points: np.ndarray, tolerance: float = 0.0) -> np.ndarray:
        return self.chi_values(points) <= self.level + tolerance

    def chi_gradient(self, points: np.ndarray, step: float = 1e-6) -> np.ndarray:
        """ Dchi by central differences; rows are covectors. """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        h = step * (1.0 + np.linalg.norm(points, axis=1))[:, None]
        grad = np.empty(points.shape)
        for axis in range(points.shape[1]):
            e = np.zeros(points.shape[1])
            e[axis] = 1.0
            grad[:, axis] = (self.chi_values(points + h * e) - self.chi_values(points - h * e)) / (2.0 * h[:, 0])
        return grad

    def boundary_sample(self, rng: np.random.Generator, count: int, level: Optional[float] = None) -> np.ndarray:
        """ Points with chi = level found by bracketing and brentq along random rays from the centre. """
        level = self.level if level is None else level
        n = self.chart.dimension
        directions = rng.standard_normal((count, n))
        directions /= np.linalg.norm(directions, axis=1)[:, None]
        scale = 0.05 * float(np.min(self.chart.bounds[:, 1] - self.chart.bounds[:, 0]))
        points = np.empty((count, n))
        for i, direction in enumerate(directions):
            def excess(r, direction=direction):
                return float(self.chi_values((self.center + r * direction)[None, :])[0]) - level

            upper = scale
            while not self.chart.contains(self.center + upper * direction):
                upper *= 0.5
            while excess(upper) <= 0:
                candidate = 2.0 * upper
                if not self.chart.contains(self.center + candidate * direction):
                    upper = self._last_inside(direction, candidate, level)
                    break
                upper = candidate
            radius = optimize.brentq(excess, 0.0, upper, xtol=1e-8, rtol=1e-12)
            points[i] = self.center + radius * direction
        if count == 0:
            raise DomainError(f"empty boundary sample for '{self.name}'")
        return points

    def _last_inside(self, direction: np.ndarray, upper: float, level: float) -> float:
        lower = 0.0
        for _ in range(80):
            middle = 0.5 * (lower + upper)
            if self.chart.contains(self.center + middle * direction):
                lower = middle
            else:
                upper = middle
        if float(self.chi_values((self.center + lower * direction)[None, :])[0]) <= level:
            raise DomainError(f"domain '{self.name}' is not contained in chart '{self.chart.name}'")
        return lower

    def bounding_box(self) -> np.ndarray:
        """ Coordinate box enclosing the domain, from a dense boundary sample with a small margin. """
        if self._box is None:
            ring = self.boundary_sample(np.random.default_rng(12345), 256)
            lo, hi = ring.min(axis=0), ring.max(axis=0)
            pad = 0.05 * (hi - lo) + 1e-9
            box = np.stack([lo - pad, hi + pad], axis=1)
            box[:, 0] = np.maximum(box[:, 0], self.chart.bounds[:, 0])
            box[:, 1] = np.minimum(box[:, 1], self.chart.bounds[:, 1])
            self._box = box
        return self._box

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """ Uniform coordinate sample of the domain by rejection from its bounding box. """
        box = self.bounding_box()
        n = self.chart.dimension
        kept = []
        total = 0
        while total < count:
            batch = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((max(64, 2 * count), n))
            batch = batch[self.contains(batch)]
            kept.append(batch)
            total += len(batch)
        return np.concatenate(kept)[:count]

    def strict_convexity_report(self, count: int = 1000, seed: int = 0) -> VerificationReport:
        """ Smallest eigenvalue of Hess chi relative to g over a boundary-dense sample, compared to strictness. """
        rng = np.random.default_rng(seed)
        points = np.vstack([self.boundary_sample(rng, count // 2), self.sample(rng, count - count // 2)])
        hess = manifold_hessian_batch(self.chart, self.chi_values, points)
        metric = self.chart.metric(points)
        smallest = np.array([linalg.eigh(h, g, eigvals_only=True)[0] for h, g in zip(hess, metric)])
        return worst("strict-convexity", smallest - self.strictness, points, 1e-6, strictness=self.strictness)


def geodesic_ball(chart: ManifoldChart, center, radius: float, strictness: float = 0.0,
                  collar: Optional[float] = None) -> ConvexDomain:
    """ Closed ball {delta(o, x)^2 <= rho^2}. """
    center = np.asarray(center, dtype=float)

    def chi(points):
        return distance_batch(chart, points, center) ** 2

    return ConvexDomain(chart, chi, radius ** 2, center, radius=float(radius), strictness=strictness,
                        name=f"ball({chart.name}, r={radius:g})", collar=collar)


def coordinate_ball(chart: ManifoldChart, center, level: float = 1.0, collar: Optional[float] = None) -> ConvexDomain:
    """ {|x - o|^2 <= c} in chart coordinates. """
    center = np.asarray(center, dtype=float)

    def chi(points):
        return np.sum((np.asarray(points) - center) ** 2, axis=-1)

    radius = np.sqrt(level) if chart.is_flat else None
    return ConvexDomain(chart, chi, level, center, radius=radius, strictness=2.0 if chart.is_flat else 0.0,
                        name="squared-norm", collar=collar)


def load_domain(spec: dict, chart: ManifoldChart) -> ConvexDomain:
    """ Domain from its JSON description. """
    unknown = set(spec) - DOMAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown domain keys {sorted(unknown)}")
    collar = spec.get("collar")
    if "ball" in spec:
        ball = spec["ball"]
        return geodesic_ball(chart, ball["center"], float(ball["radius"]), float(spec.get("strictness", 0.0)), collar)
    chi = spec.get("chi", "squared-norm")
    center = np.asarray(spec.get("center", np.zeros(chart.dimension)), dtype=float)
    level = float(spec.get("level", 1.0))
    if chi == "squared-norm":
        return coordinate_ball(chart, center, level, collar)
    if chi == "distance-to-center":
        return geodesic_ball(chart, center, np.sqrt(level), float(spec.get("strictness", 0.0)), collar)
    return ConvexDomain(chart, expression_function(chi, chart.dimension), level, center,
                        strictness=float(spec.get("strictness", 0.0)), name="custom", collar=collar)


# Separating functions


def kendall_ratio(dist: np.ndarray, dist_x_center: np.ndarray, dist_y_center: np.ndarray,
                  curvature: float, h: float, p: int) -> np.ndarray:
    """ ((1 - cos(sqrt K d)) / (cos(sqrt K d_xo) cos(sqrt K d_yo) - h^2))^p """
    root = np.sqrt(curvature)
    denominator = np.cos(root * dist_x_center) * np.cos(root * dist_y_center) - h ** 2
    if np.any(denominator <= 0):
        raise ParameterError(f"Kendall parameter h={h} too large for the ball (denominator <= 0)")
    return ((1.0 - np.cos(root * dist)) / denominator) ** p


def default_kendall_h(curvature: float, radius: float) -> float:
    return 0.1 * np.sqrt(np.cos(np.sqrt(curvature) * radius) ** 2)


@dataclass
class SeparatingFunction:
    """ Psi on domain x domain, vanishing exactly on the diagonal, Psi ~ delta^nu. """

    domain: ConvexDomain
    kind: str = HALF_DISTANCE_SQUARED
    p: int = 2
    h: Optional[float] = None

    def __post_init__(self):
        chart = self.domain.chart
        if self.p <= 0 or self.p % 2:
            raise ParameterError(f"exponent p must be an even positive integer, got {self.p}")
        if self.kind == HALF_DISTANCE_SQUARED:
            if not chart.hadamard:
                raise ConfigError("half squared distance needs a chart in Hadamard mode (K = 0)")
        elif self.kind == KENDALL:
            if chart.curvature_bound <= 0 or not self.domain.is_ball:
                raise ConfigError("Kendall's function needs a geodesic ball in a chart with K > 0")
            if self.h is None:
                self.h = default_kendall_h(chart.curvature_bound, self.domain.radius)
            if np.cos(np.sqrt(chart.curvature_bound) * self.domain.radius) ** 2 <= self.h ** 2:
                raise ParameterError(f"Kendall parameter h={self.h} too large for radius {self.domain.radius}")
        else:
            raise ConfigError(f"unknown separating function '{self.kind}'")

    @property
    def curvature(self) -> float:
        return self.domain.chart.curvature_bound

    @property
    def nu(self) -> int:
        return self.p if self.kind == KENDALL else 2

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        chart = self.domain.chart
        dist = distance_batch(chart, x, y)
        if self.kind == HALF_DISTANCE_SQUARED:
            return 0.5 * dist ** 2
        center = self.domain.center
        return kendall_ratio(dist, distance_batch(chart, x, center), distance_batch(chart, y, center),
                             self.curvature, self.h, self.p)

    def on_product(self, points: np.ndarray) -> np.ndarray:
        """ Psi as a function on product coordinates (m, 2n). """
        n = self.domain.chart.dimension
        points = np.asarray(points, dtype=float)
        return self(points[..., :n], points[..., n:])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p, "h": self.h, "nu": self.nu}


def half_distance_squared(domain: ConvexDomain, x, x_prime) -> float:
    """ delta(x, x')^2 / 2; Hadamard mode only. """
    return float(SeparatingFunction(domain, HALF_DISTANCE_SQUARED)(np.asarray(x, float), np.asarray(x_prime, float)))


def kendall_psi(domain: ConvexDomain, x, x_prime, p: int = 2, h: Optional[float] = None) -> float:
    return float(SeparatingFunction(domain, KENDALL, p, h)(np.asarray(x, float), np.asarray(x_prime, float)))


def default_separating_function(domain: ConvexDomain, p: int = 2, h: Optional[float] = None) -> SeparatingFunction:
    if domain.chart.hadamard:
        return SeparatingFunction(domain, HALF_DISTANCE_SQUARED)
    return SeparatingFunction(domain, KENDALL, p, h)


# Exponential integrability profile


def integrability_phi_batch(domain: ConvexDomain, points: np.ndarray) -> np.ndarray:
    if not domain.is_ball:
        raise PreconditionError("integrability profile needs a geodesic ball")
    dist = distance_batch(domain.chart, points, domain.center)
    return np.cos(np.pi / (3.0 * domain.radius) * dist)


def integrability_phi(domain: ConvexDomain, x) -> float:
    """ phi(x) = cos(pi/(3 rho) delta(o, x)), between 0.5 and 1 on the ball. """
    return float(integrability_phi_batch(domain, np.asarray(x, dtype=float)[None, :])[0])


def alpha_for_ball(radius: float) -> float:
    """ alpha = (pi / (3 rho))^2 / 2 """
    if radius <= 0:
        raise ParameterError("ball radius must be positive")
    return 0.5 * (np.pi / (3.0 * radius)) ** 2


# Numerical checks


def _unit_tangents(chart: ManifoldChart, points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    vectors = rng.standard_normal(points.shape)
    norms = riemannian_norm_batch(chart, points, vectors[:, :, None])
    return vectors / norms[:, None]


def integrability_hessian_report(domain: ConvexDomain, count: int = 1000, seed: int = 0) -> VerificationReport:
    """ Hess phi<u,u> + 2 alpha phi |u|_r^2 <= 0 over sampled (x, u) with |u|_r = 1. """
    rng = np.random.default_rng(seed)
    points = domain.sample(rng, count)
    units = _unit_tangents(domain.chart, points, rng)
    hess = manifold_hessian_batch(domain.chart, lambda y: integrability_phi_batch(domain, y), points)
    alpha = alpha_for_ball(domain.radius)
    values = np.einsum("mi,mij,mj->m", units, hess, units) + 2.0 * alpha * integrability_phi_batch(domain, points)
    return worst("integrability-hessian", -values, np.hstack([points, units]), 1e-6, alpha=alpha)


def convexity_report(psi: SeparatingFunction, count: int = 1000, seed: int = 0,
                     step: float = 1e-3) -> VerificationReport:
    """ Second differences of Psi along product geodesics through sampled pairs. """
    domain = psi.domain
    chart = domain.chart
    rng = np.random.default_rng(seed)
    first, second = domain.sample(rng, count), domain.sample(rng, count)
    v_first, v_second = _unit_tangents(chart, first, rng), _unit_tangents(chart, second, rng)
    forward = np.empty((count, 2 * chart.dimension))
    backward = np.empty((count, 2 * chart.dimension))
    for i in range(count):
        forward[i] = np.concatenate([geodesic_shoot(chart, first[i], v_first[i], step),
                                     geodesic_shoot(chart, second[i], v_second[i], step)])
        backward[i] = np.concatenate([geodesic_shoot(chart, first[i], -v_first[i], step),
                                      geodesic_shoot(chart, second[i], -v_second[i], step)])
    centre = np.hstack([first, second])
    differences = (psi.on_product(forward) - 2.0 * psi.on_product(centre) + psi.on_product(backward)) / step ** 2
    return worst(f"convexity[{psi.kind}, p={psi.p}]", differences, centre, 1e-6, step=step)


def equivalence_constant(psi: SeparatingFunction, count: int = 1000, seed: int = 0) -> float:
    """ Smallest c with delta^nu / c <= Psi <= c delta^nu over a sample of distinct pairs. """
    rng = np.random.default_rng(seed)
    domain = psi.domain
    first, second = domain.sample(rng, count), domain.sample(rng, count)
    dist = distance_batch(domain.chart, first, second)
    keep = dist > 1e-8
    ratio = psi(first[keep], second[keep]) / dist[keep] ** psi.nu
    return float(max(np.max(ratio), np.max(1.0 / ratio)))


def calibrate_kendall(domain: ConvexDomain, h: Optional[float] = None, count: int = 200,
                      seed: int = 0) -> Tuple[SeparatingFunction, VerificationReport]:
    """ Validate Kendall's function with p = 2, retrying with p = 4 when the convexity test fails. """
    report = None
    psi = None
    for p in (2, 4):
        psi = SeparatingFunction(domain, KENDALL, p, h)
        report = convexity_report(psi, count, seed)
        if report.passed:
            return psi, report
        logger.warning("Kendall function with p=%s failed convexity (margin %s); raising p", p, report.margin)
    return psi, report
