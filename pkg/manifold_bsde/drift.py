# -*- coding: utf-8 -*-
"""Drift fields, truncation and the assembled Lipschitz drift gamma

``DriftField`` wraps an evaluator f(b, x, z) vectorised over leading axes: b (..., d), x (..., n), z (..., n, d_W)
returning (..., n). ``GammaDrift`` is the truncated, cut-off drift
1/2 Gamma~_jk(x)([zbar]^k | [zbar]^j) - f~(b, x, zbar) that the parabolic solver and the regression solver share.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import roots_legendre

from . import LOGGER_NAME
from .convexity import ConvexDomain
from .geometry import ManifoldChart
from .settings import run_setting
from .utilities.errors import AccuracyError, ConfigError, ParameterError, PreconditionError
from .utilities.expressions import VectorExpression, coordinate_variables, matrix_variables
from .utilities.utils import parallel_map, smootherstep

logger = logging.getLogger(LOGGER_NAME + ".drift")

DRIFT_KEYS = {"form", "value", "matrix", "weights", "coefficient", "potential", "components", "L", "L2",
              "reference_point", "z_dependent", "center"}
MAX_QUADRATURE_NODES = 60000


@dataclass
class DriftField:
    """ Evaluator f(b, x, z) with its declared constants. """

    evaluator: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    target_dimension: int
    z_dependent: bool = False
    lipschitz: Optional[float] = None  # L
    bound: Optional[float] = None  # L2
    reference_point: Optional[np.ndarray] = None
    name: str = "drift"
    potential: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None  # G(b, u) when f = D_2 G
    description: dict = field(default_factory=dict)

    def __call__(self, b: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        b, x, z = np.asarray(b, dtype=float), np.asarray(x, dtype=float), np.asarray(z, dtype=float)
        batch = np.broadcast_shapes(b.shape[:-1], x.shape[:-1], z.shape[:-2])
        return np.broadcast_to(self.evaluator(b, x, z), batch + (self.target_dimension,)).astype(float)


def zero_drift(n: int) -> DriftField:
    return constant_drift(np.zeros(n), name="zero")


def constant_drift(value, name: str = "constant") -> DriftField:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return DriftField(lambda b, x, z: np.broadcast_to(value, np.shape(x)), len(value), lipschitz=0.0,
                      bound=float(np.linalg.norm(value)), name=name, description={"form": name, "value": value.tolist()})


def linear_x_drift(matrix, offset=None, name: str = "linear-in-x") -> DriftField:
    """ f(b, x, z) = A x + c """
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    c = np.zeros(a.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    return DriftField(lambda b, x, z: np.einsum("ij,...j->...i", a, x) + c, a.shape[0],
                      lipschitz=float(np.linalg.norm(a, 2)), name=name,
                      description={"form": name, "matrix": a.tolist(), "value": c.tolist()})


def radial_drift(coefficient: float, center, name: str = "radial") -> DriftField:
    """ f = c (x - o); outward for c > 0 """
    center = np.asarray(center, dtype=float)
    return DriftField(lambda b, x, z: coefficient * (x - center), len(center), lipschitz=abs(coefficient), name=name,
                      description={"form": name, "coefficient": coefficient, "center": center.tolist()})


def linear_z_drift(weights, dimension: int = 1, name: str = "linear-in-z") -> DriftField:
    """ f(b, x, z) = z w, a fixed combination of the columns of z. """
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    return DriftField(lambda b, x, z: np.einsum("...ia,a->...i", z, w), dimension, z_dependent=True,
                      lipschitz=float(np.linalg.norm(w)), bound=0.0, name=name,
                      description={"form": name, "weights": w.tolist()})


def gradient_drift(potential: str, n: int, chart: Optional[ManifoldChart] = None, scale: float = 1.0) -> DriftField:
    """ f = g^{-1} D_2 G for a named potential G(b, u); ``half-squared-norm`` is G = |u|^2 / 2. """
    if potential != "half-squared-norm":
        raise ConfigError(f"unknown potential '{potential}'")

    def differential(b, x, z):
        if chart is None or chart.is_flat:
            return scale * x
        return scale * np.einsum("...ij,...j->...i", chart.inverse_metric(x), x)

    def value(b, u):
        return 0.5 * scale * np.sum(np.asarray(u) ** 2, axis=-1)

    return DriftField(differential, n, lipschitz=scale, name=f"gradient[{potential}]", potential=value,
                      description={"form": "gradient", "potential": potential, "coefficient": scale})


def load_drift(spec: dict, n: int, d: int, d_w: int, chart: Optional[ManifoldChart] = None) -> DriftField:
    """ Drift from its JSON description; constants L and L2 are carried as metadata. """
    unknown = set(spec) - DRIFT_KEYS
    if unknown:
        raise ConfigError(f"unknown drift keys {sorted(unknown)}")
    form = spec.get("form", "zero")
    if form == "zero":
        out = zero_drift(n)
    elif form == "constant":
        out = constant_drift(np.broadcast_to(np.asarray(spec.get("value", 0.0), dtype=float), (n,)))
    elif form == "linear-in-x":
        out = linear_x_drift(spec.get("matrix", np.eye(n)), spec.get("value"))
    elif form == "linear-in-z":
        out = linear_z_drift(spec.get("weights", np.ones(d_w)), n)
    elif form == "radial":
        out = radial_drift(float(spec.get("coefficient", 1.0)), spec.get("center", np.zeros(n)))
    elif form == "gradient":
        out = gradient_drift(spec.get("potential", "half-squared-norm"), n, chart, float(spec.get("coefficient", 1.0)))
    elif form == "expression":
        names = ([f"b{i + 1}" for i in range(d)] + [f"x{i + 1}" for i in range(n)]
                 + [f"z{i + 1}{j + 1}" for i in range(n) for j in range(d_w)])
        expression = VectorExpression(spec["components"], names)

        def evaluator(b, x, z):
            batch = np.broadcast_shapes(np.shape(b)[:-1], np.shape(x)[:-1], np.shape(z)[:-2])
            variables = {}
            variables.update(coordinate_variables(np.broadcast_to(b, batch + (d,)), "b"))
            variables.update(coordinate_variables(np.broadcast_to(x, batch + (n,)), "x"))
            variables.update(matrix_variables(np.broadcast_to(z, batch + (n, d_w)), "z"))
            return expression(variables, batch)

        out = DriftField(evaluator, n, z_dependent=bool(spec.get("z_dependent", True)), name="expression",
                         description=dict(spec))
    else:
        raise ConfigError(f"unknown drift form '{form}'")
    if "L" in spec:
        out.lipschitz = float(spec["L"])
    if "L2" in spec:
        out.bound = float(spec["L2"])
    if "reference_point" in spec:
        out.reference_point = np.asarray(spec["reference_point"], dtype=float)
    return out


# Truncation and cut-off


@dataclass
class TruncationParams:
    """ Ramp s_eps(t) = (t - 1/eps) S5(clamp((t - 1/eps)/w)); w defaults to 1/eps. """

    epsilon: float
    width: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ParameterError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.width is None:
            self.width = 1.0 / self.epsilon
        if self.width <= 0:
            raise ParameterError("ramp width must be positive")

    @property
    def threshold(self) -> float:
        return 1.0 / self.epsilon

    def ramp(self, t: np.ndarray) -> np.ndarray:
        excess = np.maximum(np.asarray(t, dtype=float) - self.threshold, 0.0)
        return excess * smootherstep(excess / self.width)


def truncate(z: np.ndarray, params: TruncationParams) -> np.ndarray:
    """ zbar = z / (1 + s_eps(||z||)), ||.|| the Frobenius norm of each n x d_W block. """
    z = np.asarray(z, dtype=float)
    norm = np.sqrt(np.sum(z * z, axis=(-2, -1)))
    return z / (1.0 + params.ramp(norm))[..., None, None]


def default_collar(domain: ConvexDomain) -> float:
    """ The domain's own collar level, else c + |c|/2 + 1e-3. """
    if domain.collar is not None:
        return domain.collar
    return domain.level + 0.5 * abs(domain.level) + 1e-3


def collar_gap(domain: ConvexDomain, collar: float, inner: np.ndarray, outer: np.ndarray) -> float:
    """ Lower estimate (c1 - c) / max |Dchi| of the distance between {chi = c} and {chi = c1}. """
    slope = max(float(np.max(np.linalg.norm(domain.chi_gradient(points), axis=1))) for points in (inner, outer))
    return (collar - domain.level) / slope


def cutoff(domain: ConvexDomain, x: np.ndarray, collar: Optional[float] = None) -> np.ndarray:
    """ 1 on {chi <= c}, 0 on {chi >= c1}, quintic smootherstep in chi between. """
    collar = domain.collar if collar is None else collar
    if collar is None or collar <= domain.level:
        raise ConfigError(f"collar level {collar} must exceed domain level {domain.level}")
    x = np.asarray(x, dtype=float)
    inside = domain.chart.contains(x)
    chi = np.full(x.shape[:-1], np.inf)
    if np.any(inside):
        chi[inside] = domain.chi_values(x[inside])
    return 1.0 - smootherstep((chi - domain.level) / (collar - domain.level))


class GammaDrift:
    """ gamma(b, x, z) = 1/2 phi Gamma_jk(x)(zbar^k | zbar^j) - phi f(b, x, zbar).

    With ``domain=None`` the cut-off is disabled (unconstrained mode for global oracles), which requires the
    Christoffel symbols to be defined wherever the solution goes.
    """

    def __init__(self, chart: ManifoldChart, drift: DriftField, params: TruncationParams,
                 domain: Optional[ConvexDomain] = None, collar: Optional[float] = None):
        if drift.target_dimension != chart.dimension:
            raise ConfigError(f"drift has {drift.target_dimension} components, chart has dimension {chart.dimension}")
        self.chart = chart
        self.drift = drift
        self.params = params
        self.domain = domain
        self.collar = None
        if domain is not None:
            self.collar = default_collar(domain) if collar is None else collar
            if self.collar <= domain.level:
                raise ConfigError(f"collar level {self.collar} must exceed domain level {domain.level}")
        self.logger = logging.getLogger(LOGGER_NAME + ".drift.GammaDrift")

    def weight(self, x: np.ndarray) -> np.ndarray:
        if self.domain is None:
            return np.ones(np.shape(x)[:-1])
        return cutoff(self.domain, x, self.collar)

    def with_params(self, params: TruncationParams) -> "GammaDrift":
        return GammaDrift(self.chart, self.drift, params, self.domain, self.collar)

    def __call__(self, b: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        b, x, z = np.asarray(b, dtype=float), np.asarray(x, dtype=float), np.asarray(z, dtype=float)
        batch = np.broadcast_shapes(b.shape[:-1], x.shape[:-1], z.shape[:-2])
        x = np.broadcast_to(x, batch + x.shape[-1:])
        zbar = truncate(np.broadcast_to(z, batch + z.shape[-2:]), self.params)
        weight = self.weight(x)
        out = -weight[..., None] * self.drift(b, x, zbar)
        active = weight > 0
        if np.any(active) and not self.chart.is_flat:
            gamma = self.chart.christoffel_batch(x[active])
            quadratic = np.einsum("mijk,mja,mka->mi", gamma, zbar[active], zbar[active])
            out[active] += 0.5 * weight[active][..., None] * quadratic
        return out


def gamma_assemble(chart: ManifoldChart, domain: Optional[ConvexDomain], drift: DriftField,
                   params: TruncationParams, collar: Optional[float] = None) -> GammaDrift:
    """ Evaluator of the truncated, cut-off drift used by both solvers. """
    return GammaDrift(chart, drift, params, domain, collar)


# Mollification


def bump_profile(u: np.ndarray) -> np.ndarray:
    """ exp(-1/(1-u^2)) on [0, 1), zero beyond. """
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    inside = u < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def bump_quadrature(dimension: int, level: int, nodes_per_axis: int):
    """ Tensor Gauss-Legendre nodes on [-1/l, 1/l]^D with weights rho_l normalised to sum 1. """
    x, w = roots_legendre(nodes_per_axis)
    grids = np.meshgrid(*([x] * dimension), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack(np.meshgrid(*([w] * dimension), indexing="ij")).reshape(dimension, -1), axis=0)
    weights = weights * bump_profile(np.linalg.norm(points, axis=1))
    total = weights.sum()
    return points / level, weights / total


class MollifiedDrift:
    """ f_l = f * rho_l over (b, x, z), with f set to zero outside the chart box. """

    def __init__(self, drift: DriftField, chart: ManifoldChart, level: int, base_dimension: int, noise_dimension: int,
                 nodes_per_axis: Optional[int] = None, workers: int = 1):
        self.drift = drift
        self.chart = chart
        self.level = int(level)
        self.d, self.n, self.d_w = base_dimension, chart.dimension, noise_dimension
        self.dimension = self.d + self.n + self.n * self.d_w
        if nodes_per_axis is None:
            nodes_per_axis = max(3, min(9, int(MAX_QUADRATURE_NODES ** (1.0 / self.dimension))))
            if nodes_per_axis == 3:
                logger.warning("mollifier over %s variables uses only 3 nodes per axis", self.dimension)
        self.nodes_per_axis = nodes_per_axis
        self.offsets, self.weights = bump_quadrature(self.dimension, self.level, nodes_per_axis)
        self.workers = workers

    def _split(self, offsets: np.ndarray):
        d, n = self.d, self.n
        return offsets[:, :d], offsets[:, d:d + n], offsets[:, d + n:].reshape(-1, n, self.d_w)

    def _single(self, args, offsets=None, weights=None):
        b, x, z = args
        offsets = self.offsets if offsets is None else offsets
        weights = self.weights if weights is None else weights
        db, dx, dz = self._split(offsets)
        shifted = x - dx
        values = self.drift(b - db, shifted, z - dz)
        values[~self.chart.contains(shifted)] = 0.0
        return weights @ values

    def __call__(self, b: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        b, x, z = np.asarray(b, dtype=float), np.asarray(x, dtype=float), np.asarray(z, dtype=float)
        batch = np.broadcast_shapes(b.shape[:-1], x.shape[:-1], z.shape[:-2])
        b = np.broadcast_to(b, batch + (self.d,)).reshape(-1, self.d)
        x = np.broadcast_to(x, batch + (self.n,)).reshape(-1, self.n)
        z = np.broadcast_to(z, batch + (self.n, self.d_w)).reshape(-1, self.n, self.d_w)
        rows = parallel_map(self._single, list(zip(b, x, z)), self.workers)
        return np.asarray(rows).reshape(batch + (self.n,))

    def refinement_change(self, b, x, z) -> float:
        """ Relative change of f_l at one point when the quadrature gains two nodes per axis. """
        offsets, weights = bump_quadrature(self.dimension, self.level, self.nodes_per_axis + 2)
        coarse = self._single((b, x, z))
        fine = self._single((b, x, z), offsets, weights)
        return float(np.linalg.norm(fine - coarse) / max(1.0, np.linalg.norm(fine)))


@dataclass
class MollifiedResult:
    """ g_l together with its outward shift constant A and the sampled C-hat. """

    drift: DriftField
    level: int
    shift: float
    c_hat: float
    margin: float


def mollify(drift: DriftField, level: int, domain: ConvexDomain, params: TruncationParams,
            base_dimension: int = 1, noise_dimension: int = 1, sample_count: int = 64, seed: int = 0,
            nodes_per_axis: Optional[int] = None, collar: Optional[float] = None) -> MollifiedResult:
    """ g_l = f_l + (A/l)(x - o) with A = (G C-hat + 1) / r_min, so that Dchi . g_l >= 1/l on the boundary.

    C-hat = l max |f_l - f|, G = max |Dchi| and r_min = min Dchi . (x - o), all over boundary samples. Requires
    1/l below the gap between {chi = c} and the collar level set, and f outward on the sample.
    """
    chart = domain.chart
    collar = default_collar(domain) if collar is None else collar
    rng = np.random.default_rng(seed)
    boundary = domain.boundary_sample(rng, sample_count)
    gap = collar_gap(domain, collar, boundary, domain.boundary_sample(rng, sample_count, collar))
    if 1.0 / level >= gap:
        raise PreconditionError(f"mollifier level {level} too coarse: 1/l must be below the collar gap {gap:.4g}")
    grad_chi = domain.chi_gradient(boundary)
    radial = np.einsum("mi,mi->m", grad_chi, boundary - domain.center)
    if np.min(radial) <= 0:
        raise PreconditionError(f"domain '{domain.name}' is not star-shaped about its centre")

    smooth = MollifiedDrift(drift, chart, level, base_dimension, noise_dimension, nodes_per_axis,
                            run_setting("workers", 1))
    b = rng.uniform(-1.0, 1.0, (sample_count, base_dimension))
    z = rng.standard_normal((sample_count, chart.dimension, noise_dimension))
    z *= (params.threshold * rng.random(sample_count) / np.linalg.norm(z, axis=(1, 2)))[:, None, None]
    change = smooth.refinement_change(b[0], boundary[0], z[0])
    if change > 1e-4:
        raise AccuracyError(f"mollifier quadrature changed by {change:.3g} under refinement")
    difference = np.linalg.norm(smooth(b, boundary, z) - drift(b, boundary, z), axis=1)
    c_hat = level * float(np.max(difference))
    shift = (float(np.max(np.linalg.norm(grad_chi, axis=1))) * c_hat + 1.0) / float(np.min(radial))
    center = domain.center

    def evaluator(b_, x_, z_):
        return smooth(b_, x_, z_) + (shift / level) * (np.asarray(x_) - center)

    g_l = replace(drift, evaluator=evaluator, name=f"{drift.name}*rho_{level}",
                  description={**drift.description, "mollified": level, "shift": shift})
    pairing = np.einsum("mi,mi->m", grad_chi, g_l(b, boundary, z))
    margin = float(pairing.min())
    logger.debug("mollified drift l=%s: C-hat %s, A %s, min pairing %s", level, c_hat, shift, margin)
    if margin < (1.0 - 1e-9) / level:
        witness = boundary[int(np.argmin(pairing))]
        raise AccuracyError(f"mollified drift pairs to {margin:.4g} < 1/l = {1.0 / level:.4g} at {witness.tolist()}; "
                            f"the drift is not outward there")
    return MollifiedResult(g_l, level, shift, c_hat, margin)


# Probes


@dataclass
class LipschitzProbe:
    lipschitz: float  # L'
    bound: float  # L2

    def to_dict(self) -> dict:
        return {"lipschitz": self.lipschitz, "bound": self.bound}


def lipschitz_probe(drift: DriftField, sample_count: int = 1000, box: Optional[np.ndarray] = None,
                    base_dimension: int = 1, noise_dimension: int = 1, z_cap: float = 1.0,
                    seed: int = 0) -> LipschitzProbe:
    """ max |f(b,x,z) - f(b',x',z')| / ((|b-b'| + |x-x'|)(1 + ||z|| + ||z'||) + ||z - z'||) and max_b |f(b,x0,0)|. """
    n = drift.target_dimension
    box = np.array([[-1.0, 1.0]] * n) if box is None else np.asarray(box, dtype=float)
    rng = np.random.default_rng(seed)

    def draw(count):
        b = rng.uniform(-1.0, 1.0, (count, base_dimension))
        x = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((count, n))
        z = rng.standard_normal((count, n, noise_dimension))
        z *= (z_cap * rng.random(count) / np.linalg.norm(z, axis=(1, 2)))[:, None, None]
        return b, x, z

    b, x, z = draw(sample_count)
    # half the pairs are far apart, half are local perturbations with small z
    b2, x2, z2 = draw(sample_count)
    near = np.arange(sample_count) % 2 == 0
    b2[near] = b[near] + 1e-3 * rng.standard_normal((near.sum(), base_dimension))
    x2[near] = x[near] + 1e-3 * rng.standard_normal((near.sum(), n))
    z[near] *= 1e-3
    z2[near] = z[near] + 1e-3 * rng.standard_normal((near.sum(), n, noise_dimension))
    numerator = np.linalg.norm(drift(b, x, z) - drift(b2, x2, z2), axis=1)
    zn, zn2 = np.linalg.norm(z, axis=(1, 2)), np.linalg.norm(z2, axis=(1, 2))
    denominator = ((np.linalg.norm(b - b2, axis=1) + np.linalg.norm(x - x2, axis=1)) * (1.0 + zn + zn2)
                   + np.linalg.norm(z - z2, axis=(1, 2)))
    quotient = numerator[denominator > 0] / denominator[denominator > 0]
    x0 = np.zeros(n) if drift.reference_point is None else drift.reference_point
    at_reference = drift(b, np.broadcast_to(x0, x.shape), np.zeros_like(z))
    return LipschitzProbe(float(np.max(quotient, initial=0.0)), float(np.max(np.linalg.norm(at_reference, axis=1))))


def truncation_lipschitz(params: TruncationParams, dimension: int = 1, columns: int = 1, sample_count: int = 1000,
                         seed: int = 0) -> float:
    """ Sampled max ||zbar - zbar'|| / ||z - z'|| over z up to 20/eps. """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((sample_count, dimension, columns))
    z *= (20.0 * params.threshold * rng.random(sample_count) / np.linalg.norm(z, axis=(1, 2)))[:, None, None]
    z2 = z + rng.standard_normal(z.shape) * rng.choice([1e-4, 1e-1, 1.0], sample_count)[:, None, None]
    ratio = (np.linalg.norm(truncate(z, params) - truncate(z2, params), axis=(1, 2))
             / np.linalg.norm(z - z2, axis=(1, 2)))
    return float(np.max(ratio))


def gamma_bound(gamma: GammaDrift, points: np.ndarray, base_points: np.ndarray, z_norm: float,
                noise_dimension: int = 1, seed: int = 0) -> float:
    """ max |gamma| over sampled (b, x) and z of the given Frobenius norm. """
    rng = np.random.default_rng(seed)
    n, count = gamma.chart.dimension, len(points)
    z = rng.standard_normal((count, n, noise_dimension))
    z *= (z_norm / np.linalg.norm(z, axis=(1, 2)))[:, None, None]
    return float(np.max(np.linalg.norm(gamma(base_points, points, z), axis=1)))
