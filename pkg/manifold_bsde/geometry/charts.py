# -*- coding: utf-8 -*-
"""Coordinate charts

A chart is one coordinate patch carrying a metric tensor, optionally closed-form Christoffel symbols and distance,
and an axis-aligned box of valid coordinates. Four charts are built in (flat space, the hyperbolic half-plane, a
stereographic sphere cap and a 1-D interval with a metric); custom charts come from JSON descriptions whose metric
entries are numexpr strings.

Notes
-----
    All callables are vectorised: points have shape (..., n), metrics (..., n, n) and Christoffel symbols
    (..., n, n, n) indexed [i, j, k] for Gamma^i_jk.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .. import LOGGER_NAME, MAX_TARGET_DIMENSION
from ..settings import numeric
from ..utilities.errors import ConditioningError, ConfigError, DimensionError, DomainError, MetricError
from ..utilities.expressions import MatrixExpression, check_expression, coordinate_variables, evaluate

logger = logging.getLogger(LOGGER_NAME + ".geometry")

CLOSED_FORM = "closed-form"
FINITE_DIFFERENCE = "finite-difference"
MAX_CONDITION = 1e12


@dataclass
class ManifoldChart:
    """ Single coordinate patch of a Riemannian manifold. """

    name: str
    dimension: int
    metric_fn: Callable[[np.ndarray], np.ndarray]
    bounds: np.ndarray
    curvature_bound: float = 0.0  # K; zero flags Hadamard mode
    christoffel_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    distance_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    injectivity_radius_hint: Optional[float] = None
    safe_radius: float = np.inf
    is_flat: bool = False
    mode: Optional[str] = None
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(self.dimension, 2)
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ConfigError(f"chart '{self.name}' has an empty coordinate box")
        self.curvature_bound = max(0.0, float(self.curvature_bound))
        if self.mode is None:
            self.mode = CLOSED_FORM if self.christoffel_fn is not None else FINITE_DIFFERENCE
        if self.mode == CLOSED_FORM and self.christoffel_fn is None:
            raise ConfigError(f"chart '{self.name}' has no closed-form Christoffel symbols")

    @property
    def christoffel_mode(self) -> str:
        return self.mode

    @property
    def hadamard(self) -> bool:
        return self.curvature_bound == 0.0

    def with_mode(self, mode: str) -> "ManifoldChart":
        """ Copy of the chart with the Christoffel evaluation mode forced. """
        return replace(self, mode=mode)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def require(self, points: np.ndarray) -> np.ndarray:
        """ Raise DomainError unless every point is inside the chart box. """
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.dimension:
            raise DimensionError(f"chart '{self.name}' expects {self.dimension} coordinates, got {points.shape[-1]}")
        inside = self.contains(points)
        if not np.all(inside):
            bad = points.reshape(-1, self.dimension)[~np.ravel(inside)][0]
            raise DomainError(f"point {bad.tolist()} outside chart '{self.name}' bounds {self.bounds.tolist()}")
        return points

    def metric(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.metric_fn(np.asarray(points, dtype=float)), dtype=float)

    def inverse_metric(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self.metric(points))

    def christoffel_batch(self, points: np.ndarray, checked: bool = True) -> np.ndarray:
        """ Gamma^i_jk at points of shape (..., n); returns (..., n, n, n). """
        points = self.require(points) if checked else np.asarray(points, dtype=float)
        if self.mode == CLOSED_FORM:
            return np.asarray(self.christoffel_fn(points), dtype=float)
        return self._finite_difference_christoffel(points)

    def _finite_difference_christoffel(self, points: np.ndarray) -> np.ndarray:
        batch = points.shape[:-1]
        flat = points.reshape(-1, self.dimension)
        n = self.dimension
        h = numeric("metric_step", 1e-5) * (1.0 + np.linalg.norm(flat, axis=1))
        g = self.metric(flat)
        if np.any(np.linalg.cond(g) > MAX_CONDITION):
            raise ConditioningError(f"metric of chart '{self.name}' is numerically singular")
        g_inv = np.linalg.inv(g)
        dg = np.empty((flat.shape[0], n, n, n))  # [m, l, i, j] = d_l g_ij
        for axis in range(n):
            shift = np.zeros(n)
            shift[axis] = 1.0
            step = h[:, None] * shift
            dg[:, axis] = (self.metric(flat + step) - self.metric(flat - step)) / (2.0 * h[:, None, None])
        term = (
            np.transpose(dg, (0, 2, 1, 3))  # d_j g_lk -> [m, l, j, k]
            + np.transpose(dg, (0, 2, 3, 1))  # d_k g_jl -> [m, l, j, k]
            - dg  # d_l g_jk
        )
        gamma = 0.5 * np.einsum("mil,mljk->mijk", g_inv, term)
        gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
        return gamma.reshape(batch + (n, n, n))


# Built-in charts


def _conformal_christoffel(grad_phi: np.ndarray) -> np.ndarray:
    """ Gamma for g = exp(2 phi) I: delta_ik d_j phi + delta_jk d_i phi - delta_ij d_k phi. """
    n = grad_phi.shape[-1]
    eye = np.eye(n)
    return (
        np.einsum("ik,...j->...ijk", eye, grad_phi)
        + np.einsum("ij,...k->...ijk", eye, grad_phi)
        - np.einsum("jk,...i->...ijk", eye, grad_phi)
    )


def flat_chart(dimension: int = 1, half_width: float = 50.0) -> ManifoldChart:
    """ Euclidean R^n; Gamma = 0 and delta is the Euclidean distance. """
    eye = np.eye(dimension)
    return ManifoldChart(
        name=f"flat-{dimension}",
        dimension=dimension,
        metric_fn=lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (dimension, dimension)).copy(),
        bounds=[[-half_width, half_width]] * dimension,
        curvature_bound=0.0,
        christoffel_fn=lambda x: np.zeros(np.shape(x)[:-1] + (dimension,) * 3),
        distance_fn=lambda x, y: np.linalg.norm(np.asarray(y) - np.asarray(x), axis=-1),
        is_flat=True,
        description={"metric": "flat", "dimension": dimension},
    )


def _half_plane_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    chord = np.linalg.norm(p - q, axis=-1)
    # 2 asinh(|p-q| / (2 sqrt(y y'))) is the cancellation-free form of cosh d = 1 + |p-q|^2/(2yy')
    return 2.0 * np.arcsinh(chord / (2.0 * np.sqrt(p[..., 1] * q[..., 1])))


def half_plane_chart(x_range: Sequence[float] = (-10.0, 10.0), y_range: Sequence[float] = (0.05, 20.0)) -> ManifoldChart:
    """ Poincare half-plane (dx^2 + dy^2)/y^2, constant curvature -1. """
    if y_range[0] <= 0:
        raise ConfigError("half-plane chart needs y > 0")

    def metric(x):
        x = np.asarray(x, dtype=float)
        return (1.0 / x[..., 1] ** 2)[..., None, None] * np.eye(2)

    def christoffel(x):
        x = np.asarray(x, dtype=float)
        grad_phi = np.zeros(x.shape)
        grad_phi[..., 1] = -1.0 / x[..., 1]
        return _conformal_christoffel(grad_phi)

    return ManifoldChart(
        name="half-plane",
        dimension=2,
        metric_fn=metric,
        bounds=[list(x_range), list(y_range)],
        curvature_bound=0.0,
        christoffel_fn=christoffel,
        distance_fn=_half_plane_distance,
        safe_radius=2.0,
        description={"metric": "half-plane", "bounds": [list(x_range), list(y_range)]},
    )


def stereographic_to_sphere(x: np.ndarray) -> np.ndarray:
    """ Inverse stereographic projection onto the unit sphere; the origin maps to the cap centre (0, 0, 1). """
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    return np.concatenate([2.0 * x, (1.0 - r2)[..., None]], axis=-1) / (1.0 + r2)[..., None]


def sphere_cap_chart(curvature: float = 1.0, cap_radius: Optional[float] = None) -> ManifoldChart:
    """ Sphere of curvature K in stereographic coordinates centred on the cap centre.

    The coordinate origin is the cap centre; the cut locus of the centre (its antipode) sits at infinity, so it never
    enters the chart. ``cap_radius`` is a geodesic radius; the chart box circumscribes that geodesic disc.
    """
    if curvature <= 0:
        raise ConfigError("sphere cap needs positive curvature")
    radius = 1.0 / np.sqrt(curvature)
    cap_radius = 2.0 * radius if cap_radius is None else float(cap_radius)
    if cap_radius >= np.pi * radius:
        raise ConfigError("sphere cap must not reach the antipode of its centre")
    half_width = np.tan(cap_radius / (2.0 * radius))

    def metric(x):
        x = np.asarray(x, dtype=float)
        scale = 4.0 * radius ** 2 / (1.0 + np.sum(x * x, axis=-1)) ** 2
        return scale[..., None, None] * np.eye(2)

    def christoffel(x):
        x = np.asarray(x, dtype=float)
        grad_phi = -2.0 * x / (1.0 + np.sum(x * x, axis=-1))[..., None]
        return _conformal_christoffel(grad_phi)

    def distance(p, q):
        sp, sq = stereographic_to_sphere(p), stereographic_to_sphere(q)
        cross = np.linalg.norm(np.cross(sp, sq), axis=-1)
        return radius * np.arctan2(cross, np.sum(sp * sq, axis=-1))

    return ManifoldChart(
        name="sphere-cap",
        dimension=2,
        metric_fn=metric,
        bounds=[[-half_width, half_width]] * 2,
        curvature_bound=curvature,
        christoffel_fn=christoffel,
        distance_fn=distance,
        injectivity_radius_hint=np.pi * radius,
        safe_radius=0.5 * cap_radius,
        description={"metric": "sphere-cap", "curvature": curvature, "cap_radius": cap_radius},
    )


def interval_chart(
    metric: Callable[[np.ndarray], np.ndarray],
    bounds: Sequence[float],
    metric_derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    arclength: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    name: str = "interval",
) -> ManifoldChart:
    """ 1-D chart with scalar metric g(x); Gamma = g'/(2g) when g' is supplied, finite differences otherwise. """

    def metric_fn(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(metric(x[..., 0]), dtype=float)[..., None, None]

    christoffel_fn = None
    if metric_derivative is not None:

        def christoffel_fn(x):
            x = np.asarray(x, dtype=float)[..., 0]
            return (metric_derivative(x) / (2.0 * metric(x)))[..., None, None, None]

    if arclength is not None:

        def distance_fn(p, q):
            return np.abs(arclength(np.asarray(q, dtype=float)[..., 0]) - arclength(np.asarray(p, dtype=float)[..., 0]))

    else:

        def distance_fn(p, q):
            p, q = np.broadcast_arrays(np.asarray(p, dtype=float)[..., 0], np.asarray(q, dtype=float)[..., 0])
            out = np.empty(p.shape)
            for index in np.ndindex(p.shape):
                out[index] = abs(integrate.quad(lambda u: np.sqrt(metric(np.asarray(u))), p[index], q[index],
                                                epsabs=1e-13, epsrel=1e-12)[0])
            return out

    return ManifoldChart(
        name=name,
        dimension=1,
        metric_fn=metric_fn,
        bounds=[list(bounds)],
        curvature_bound=0.0,
        christoffel_fn=christoffel_fn,
        distance_fn=distance_fn,
        description={"metric": name, "bounds": [list(bounds)]},
    )


def exp_interval_chart(bounds: Sequence[float] = (-3.0, 3.0)) -> ManifoldChart:
    """ g(x) = exp(2x): Gamma = 1 and delta(x, x') = |e^x - e^x'|. """
    return interval_chart(
        metric=lambda x: np.exp(2.0 * x),
        metric_derivative=lambda x: 2.0 * np.exp(2.0 * x),
        arclength=np.exp,
        bounds=bounds,
        name="exp-interval",
    )


def product_chart(chart: ManifoldChart) -> ManifoldChart:
    """ M x M with the product metric; Christoffel symbols are block diagonal. """
    n = chart.dimension

    def split(y):
        y = np.asarray(y, dtype=float)
        return y[..., :n], y[..., n:]

    def metric(y):
        first, second = split(y)
        out = np.zeros(np.shape(y)[:-1] + (2 * n, 2 * n))
        out[..., :n, :n] = chart.metric(first)
        out[..., n:, n:] = chart.metric(second)
        return out

    def christoffel(y):
        first, second = split(y)
        out = np.zeros(np.shape(y)[:-1] + (2 * n,) * 3)
        out[..., :n, :n, :n] = chart.christoffel_batch(first)
        out[..., n:, n:, n:] = chart.christoffel_batch(second)
        return out

    def distance(p, q):
        (p1, p2), (q1, q2) = split(p), split(q)
        from .kernels import distance_batch  # pylint: disable=import-outside-toplevel

        return np.hypot(distance_batch(chart, p1, q1), distance_batch(chart, p2, q2))

    return ManifoldChart(
        name=f"{chart.name}^2",
        dimension=2 * n,
        metric_fn=metric,
        bounds=np.vstack([chart.bounds, chart.bounds]),
        curvature_bound=chart.curvature_bound,
        christoffel_fn=christoffel,
        distance_fn=distance,
        is_flat=chart.is_flat,
        description={"product_of": chart.description},
    )


BUILTIN_CHARTS = {
    "flat": lambda spec: flat_chart(int(spec.get("dimension", 1)), float(spec.get("half_width", 50.0))),
    "half-plane": lambda spec: half_plane_chart(*spec.get("bounds", [(-10.0, 10.0), (0.05, 20.0)])),
    "sphere-cap": lambda spec: sphere_cap_chart(float(spec.get("curvature", 1.0)), spec.get("cap_radius")),
    "exp-interval": lambda spec: exp_interval_chart(*spec.get("bounds", [(-3.0, 3.0)])),
}
CHART_KEYS = {
    "metric", "dimension", "bounds", "curvature", "curvature_bound", "cap_radius", "half_width",
    "injectivity_radius_hint", "christoffel_mode", "name",
}


def check_metric(chart: ManifoldChart, sample_count: int = 64, seed: int = 0) -> float:
    """ Smallest metric eigenvalue over a uniform sample of the chart box; MetricError unless positive. """
    rng = np.random.default_rng(seed)
    lo, hi = chart.bounds[:, 0], chart.bounds[:, 1]
    points = lo + (hi - lo) * rng.random((sample_count, chart.dimension))
    g = chart.metric(points)
    if not np.allclose(g, np.swapaxes(g, -1, -2), atol=1e-12):
        raise MetricError(f"metric of chart '{chart.name}' is not symmetric")
    smallest = float(np.min(np.linalg.eigvalsh(g)))
    if not smallest > 0:
        raise MetricError(f"metric of chart '{chart.name}' is not positive definite (min eigenvalue {smallest:g})")
    return smallest


def load_chart(spec: dict) -> ManifoldChart:
    """ Build a chart from its JSON description: a named built-in or a custom metric table. """
    unknown = set(spec) - CHART_KEYS
    if unknown:
        raise ConfigError(f"unknown chart keys {sorted(unknown)}")
    metric = spec.get("metric", "flat")
    if isinstance(metric, str):
        if metric not in BUILTIN_CHARTS:
            raise ConfigError(f"unknown built-in chart '{metric}'")
        chart = BUILTIN_CHARTS[metric](spec)
    else:
        chart = _custom_chart(spec)
    if "christoffel_mode" in spec:
        chart = chart.with_mode(spec["christoffel_mode"])
    if chart.dimension > MAX_TARGET_DIMENSION:
        raise ConfigError(f"charts of dimension {chart.dimension} are not supported")
    check_metric(chart)
    logger.debug("Loaded chart %s (mode %s)", chart.name, chart.christoffel_mode)
    return chart


def _custom_chart(spec: dict) -> ManifoldChart:
    dimension = int(spec.get("dimension", len(spec["metric"])))
    if dimension > MAX_TARGET_DIMENSION:
        raise ConfigError(f"charts of dimension {dimension} are not supported")
    if "bounds" not in spec:
        raise ConfigError("custom charts must declare bounds")
    table = MatrixExpression(spec["metric"], dimension)
    return ManifoldChart(
        name=spec.get("name", "custom"),
        dimension=dimension,
        metric_fn=table,
        bounds=spec["bounds"],
        curvature_bound=float(spec.get("curvature_bound", 0.0)),
        injectivity_radius_hint=spec.get("injectivity_radius_hint"),
        safe_radius=float(spec.get("injectivity_radius_hint") or np.inf) / 2.0,
        description=dict(spec),
    )


def expression_function(expression: str, dimension: int) -> Callable[[np.ndarray], np.ndarray]:
    """ Scalar function of chart coordinates from a numexpr string (used for custom chi forms). """
    names = [f"x{i + 1}" for i in range(dimension)]
    check_expression(expression, names)

    def function(x):
        x = np.asarray(x, dtype=float)
        return evaluate(expression, coordinate_variables(x), x.shape[:-1])

    return function
