# -*- coding: utf-8 -*-
"""Forward diffusion

Euler-Maruyama simulation of dB = b(B) dt + sigma(B) dW, the generator L of the diffusion, first exit times from
boxes and the L2 flow-continuity constant. Every path draws from its own generator spawned from (seed, path index),
so a bundle is bit-reproducible and independent of how many paths are simulated together.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import LOGGER_NAME, MAX_BASE_DIMENSION
from .utilities.errors import ConfigError, DimensionError, NumericError, PreconditionError
from .utilities.expressions import VectorExpression, coordinate_variables
from .utilities.utils import batched_gradient, batched_hessian

logger = logging.getLogger(LOGGER_NAME + ".forward")

DIFFUSION_KEYS = {"base_dimension", "noise_dimension", "drift", "dispersion", "sigma_sup", "name"}


@dataclass
class DiffusionSpec:
    """ Coefficients b: R^d -> R^d and sigma: R^d -> R^{d x d_W}; both vectorised over leading axes. """

    base_dimension: int
    noise_dimension: int
    drift: Callable[[np.ndarray], np.ndarray]
    dispersion: Callable[[np.ndarray], np.ndarray]
    sigma_sup: Optional[float] = None
    constant: bool = False
    name: str = "diffusion"
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.base_dimension <= MAX_BASE_DIMENSION:
            raise ConfigError(f"base dimension {self.base_dimension} outside 1..{MAX_BASE_DIMENSION}")
        if self.noise_dimension < 1:
            raise ConfigError("noise dimension must be positive")

    def b(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.broadcast_to(self.drift(points), points.shape).astype(float)

    def sigma(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        shape = points.shape[:-1] + (self.base_dimension, self.noise_dimension)
        return np.broadcast_to(self.dispersion(points), shape).astype(float)

    def diffusion_matrix(self, points: np.ndarray) -> np.ndarray:
        """ a = sigma sigma^T """
        s = self.sigma(points)
        return np.einsum("...ia,...ja->...ij", s, s)

    def dispersion_bound(self, box: Optional[np.ndarray] = None, sample_count: int = 512, seed: int = 0) -> float:
        """ Declared sup ||sigma||, else the largest sampled spectral norm over ``box``. """
        if self.sigma_sup is not None:
            return float(self.sigma_sup)
        if box is None:
            box = np.array([[-1.0, 1.0]] * self.base_dimension)
        rng = np.random.default_rng(seed)
        points = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((sample_count, self.base_dimension))
        return float(np.max(np.linalg.norm(self.sigma(points), ord=2, axis=(-2, -1))))

    def diffusion_sup(self, box: Optional[np.ndarray] = None) -> float:
        """ max ||sigma sigma^T|| used by the CFL restriction. """
        return self.dispersion_bound(box) ** 2


def constant_diffusion(base_dimension: int = 1, drift=0.0, dispersion=1.0, noise_dimension: Optional[int] = None,
                       name: str = "constant") -> DiffusionSpec:
    """ Constant b and sigma; a scalar dispersion means sigma = s * I. """
    noise_dimension = base_dimension if noise_dimension is None else noise_dimension
    b = np.broadcast_to(np.asarray(drift, dtype=float), (base_dimension,)).copy()
    s = np.asarray(dispersion, dtype=float)
    if s.ndim == 0:
        s = float(s) * np.eye(base_dimension, noise_dimension)
    s = s.reshape(base_dimension, noise_dimension)
    return DiffusionSpec(
        base_dimension,
        noise_dimension,
        drift=lambda x: np.broadcast_to(b, np.shape(x)),
        dispersion=lambda x: np.broadcast_to(s, np.shape(x)[:-1] + s.shape),
        sigma_sup=float(np.linalg.norm(s, ord=2)),
        constant=True,
        name=name,
        description={"drift": b.tolist(), "dispersion": s.tolist()},
    )


def linear_diffusion(matrix, offset=0.0, dispersion=1.0, name: str = "linear") -> DiffusionSpec:
    """ b(x) = A x + c with constant sigma (Ornstein-Uhlenbeck type). """
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = a.shape[0]
    base = constant_diffusion(d, offset, dispersion, name=name)
    c = base.b(np.zeros(d))
    base.drift = lambda x: np.einsum("ij,...j->...i", a, np.asarray(x, dtype=float)) + c
    base.constant = False
    base.description = {"drift": {"linear": a.tolist(), "offset": c.tolist()}, "dispersion": base.description["dispersion"]}
    return base


def load_diffusion(spec: dict) -> DiffusionSpec:
    """ Diffusion from JSON: constants, {"linear": A, "offset": c} or per-component numexpr strings in b1..bd. """
    unknown = set(spec) - DIFFUSION_KEYS
    if unknown:
        raise ConfigError(f"unknown diffusion keys {sorted(unknown)}")
    d = int(spec.get("base_dimension", 1))
    drift = spec.get("drift", 0.0)
    dispersion = spec.get("dispersion", 1.0)
    noise = spec.get("noise_dimension")
    name = spec.get("name", "diffusion")
    names = [f"b{i + 1}" for i in range(d)]
    if isinstance(drift, dict):
        out = linear_diffusion(drift["linear"], drift.get("offset", 0.0), dispersion, name)
    elif isinstance(drift, list) and drift and isinstance(drift[0], str):
        expression = VectorExpression(drift, names)
        out = constant_diffusion(d, 0.0, dispersion, noise, name)
        out.drift = lambda x: expression(coordinate_variables(x, "b"), np.shape(x)[:-1])
        out.constant = False
        out.description = {"drift": drift, "dispersion": out.description["dispersion"]}
    else:
        out = constant_diffusion(d, drift, dispersion, noise, name)
    if "sigma_sup" in spec:
        out.sigma_sup = float(spec["sigma_sup"])
    return out


@dataclass
class PathBundle:
    """ Simulated base paths, their Brownian increments and optional solution paths. """

    times: np.ndarray  # (N+1,)
    increments: np.ndarray  # (P, N, d_W)
    base: np.ndarray  # (P, N+1, d)
    seed: int
    X: Optional[np.ndarray] = None  # (P, N+1, n)
    Z: Optional[np.ndarray] = None  # (P, N+1, n, d_W)

    @property
    def path_count(self) -> int:
        return self.base.shape[0]

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def with_solution(self, X: np.ndarray, Z: np.ndarray) -> "PathBundle":
        return replace(self, X=X, Z=Z)

    def long_table(self):
        """ Long-format rows: path, t, B..., X..., Z (row-major). """
        p, n1 = self.path_count, len(self.times)
        columns = ["path", "t"] + [f"B{i + 1}" for i in range(self.base.shape[2])]
        blocks = [np.repeat(np.arange(p), n1)[:, None], np.tile(self.times, p)[:, None], self.base.reshape(p * n1, -1)]
        if self.X is not None:
            columns += [f"X{i + 1}" for i in range(self.X.shape[2])]
            blocks.append(self.X.reshape(p * n1, -1))
        if self.Z is not None:
            n, dw = self.Z.shape[2:]
            columns += [f"Z{i + 1}{j + 1}" for i in range(n) for j in range(dw)]
            blocks.append(self.Z.reshape(p * n1, -1))
        return columns, np.hstack(blocks)


def uniform_grid(horizon: float, steps: int) -> np.ndarray:
    return np.linspace(0.0, float(horizon), int(steps) + 1)


def path_generators(seed: int, path_count: int):
    """ One independent generator per path, spawned from the run seed. """
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(path_count)]


def brownian_increments(seed: int, path_count: int, dt: np.ndarray, noise_dimension: int) -> np.ndarray:
    dt = np.asarray(dt, dtype=float)
    scale = np.sqrt(dt)[:, None]
    return np.stack([rng.standard_normal((len(dt), noise_dimension)) * scale
                     for rng in path_generators(seed, path_count)]) if path_count else np.empty((0, len(dt), noise_dimension))


def simulate_diffusion(spec: DiffusionSpec, y, grid: Sequence[float], seed: int, path_count: int = 1,
                       increments: Optional[np.ndarray] = None) -> PathBundle:
    """ Euler-Maruyama paths B_{k+1} = B_k + b(B_k) dt_k + sigma(B_k) dW_k started at y. """
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0):
        raise PreconditionError("time grid must be strictly increasing")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != spec.base_dimension:
        raise DimensionError(f"start point has {y.size} coordinates, diffusion has {spec.base_dimension}")
    dt = np.diff(times)
    if increments is None:
        increments = brownian_increments(seed, path_count, dt, spec.noise_dimension)
    increments = np.asarray(increments, dtype=float)
    path_count = increments.shape[0]
    base = np.empty((path_count, len(times), spec.base_dimension))
    base[:, 0] = y
    for k, step in enumerate(dt):
        current = base[:, k]
        base[:, k + 1] = current + spec.b(current) * step + np.einsum("pia,pa->pi", spec.sigma(current), increments[:, k])
        if not np.all(np.isfinite(base[:, k + 1])):
            raise NumericError(f"non-finite diffusion value at step {k + 1}", k + 1)
    return PathBundle(times, increments, base, seed)


def generator_apply(spec: DiffusionSpec, scalar_fn: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-4) -> float:
    """ L h(x) = 1/2 sum a_ij d_ij h + sum b_i d_i h by central differences. """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    hess = batched_hessian(scalar_fn, x, step)[0]
    grad = batched_gradient(scalar_fn, x, step)[0]
    return float(0.5 * np.sum(spec.diffusion_matrix(x[0]) * hess) + spec.b(x[0]) @ grad)


@dataclass
class ExitRecord:
    """ First exit of each path: grid index, interpolated crossing point and time, censoring flag. """

    index: np.ndarray
    point: np.ndarray
    time: np.ndarray
    censored: np.ndarray

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(self.censored)) if self.censored.size else 0.0


def _box(box, dimension: int) -> np.ndarray:
    box = np.asarray(box, dtype=float).reshape(dimension, 2)
    if np.any(box[:, 0] >= box[:, 1]):
        raise ConfigError("base domain box is empty")
    return box


def _crossing(box: np.ndarray, before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """ Fraction theta in (0, 1] of the step at which the segment first touches the box boundary. """
    lo, hi = box[:, 0], box[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        low = np.where(after <= lo, (before - lo) / (before - after), np.inf)
        high = np.where(after >= hi, (hi - before) / (after - before), np.inf)
    theta = np.minimum(np.min(low, axis=-1), np.min(high, axis=-1))
    theta = np.where(np.isfinite(theta), theta, 1.0)
    return np.clip(theta, 0.0, 1.0)


def exit_time(spec: DiffusionSpec, box, paths: PathBundle) -> ExitRecord:
    """ First grid index at which each path is no longer strictly inside the box. """
    box = _box(box, spec.base_dimension)
    base = paths.base
    inside = np.all((base > box[:, 0]) & (base < box[:, 1]), axis=-1)  # (P, N+1)
    left = ~inside
    exited = left.any(axis=1)
    index = np.where(exited, left.argmax(axis=1), paths.steps)
    rows = np.arange(paths.path_count)
    point = base[rows, index].copy()
    time = paths.times[index].copy()
    moved = exited & (index > 0)
    if np.any(moved):
        before, after = base[rows[moved], index[moved] - 1], base[rows[moved], index[moved]]
        theta = _crossing(box, before, after)
        point[moved] = np.clip(before + theta[:, None] * (after - before), box[:, 0], box[:, 1])
        previous = paths.times[index[moved] - 1]
        time[moved] = previous + theta * (paths.times[index[moved]] - previous)
    return ExitRecord(index, point, time, ~exited)


def simulate_exit_times(spec: DiffusionSpec, box, y, dt: float, t_max: float, path_count: int, seed: int,
                        block: int = 2048) -> ExitRecord:
    """ Streaming exit-time simulation for fine steps: only surviving paths are advanced, block by block. """
    box = _box(box, spec.base_dimension)
    y = np.asarray(y, dtype=float).reshape(-1)
    steps = int(round(t_max / dt))
    generators = path_generators(seed, path_count)
    position = np.tile(y, (path_count, 1))
    index = np.full(path_count, steps)
    time = np.full(path_count, steps * dt)
    point = position.copy()
    alive = np.all((position > box[:, 0]) & (position < box[:, 1]), axis=1)
    index[~alive] = 0
    time[~alive] = 0.0
    done = 0
    while done < steps and np.any(alive):
        length = min(block, steps - done)
        live = np.flatnonzero(alive)
        noise = np.stack([generators[i].standard_normal((length, spec.noise_dimension)) for i in live]) * np.sqrt(dt)
        current = position[live]
        still = np.ones(len(live), dtype=bool)
        for k in range(length):
            nxt = current + spec.b(current) * dt + np.einsum("pia,pa->pi", spec.sigma(current), noise[:, k])
            left = still & ~np.all((nxt > box[:, 0]) & (nxt < box[:, 1]), axis=1)
            if np.any(left):
                theta = _crossing(box, current[left], nxt[left])
                rows = live[left]
                point[rows] = np.clip(current[left] + theta[:, None] * (nxt[left] - current[left]), box[:, 0], box[:, 1])
                time[rows] = (done + k + theta) * dt
                index[rows] = done + k + 1
                still &= ~left
            current = np.where(still[:, None], nxt, current)
            if not np.any(still):
                break
        position[live] = current
        alive[live] = still
        done += length
    point[alive] = position[alive]
    censored = alive.copy()
    if np.any(censored):
        logger.debug("%s of %s exit paths censored at t_max=%s", int(censored.sum()), path_count, t_max)
    return ExitRecord(index, point, time, censored)


@dataclass
class FlowContinuity:
    """ Estimate of the L2 flow-continuity constant C_{sigma,b}. """

    value: float
    standard_error: float
    ratios: np.ndarray

    def to_dict(self) -> dict:
        return {"value": self.value, "standard_error": self.standard_error, "pairs": int(self.ratios.size)}


def estimate_flow_continuity(spec: DiffusionSpec, horizon: float = 1.0, steps: int = 200, trials: int = 8,
                             path_count: int = 200, seed: int = 0, box=None,
                             offset: Union[float, np.ndarray] = 0.1) -> FlowContinuity:
    """ max over start pairs of E|B_T^x - B_T^x'|^2 / |x - x'|^2 using common random numbers. """
    d = spec.base_dimension
    box = np.array([[-1.0, 1.0]] * d) if box is None else _box(box, d)
    rng = np.random.default_rng(seed)
    grid = uniform_grid(horizon, steps)
    increments = brownian_increments(seed + 1, path_count, np.diff(grid), spec.noise_dimension)
    ratios = np.empty(trials)
    errors = np.empty(trials)
    for trial in range(trials):
        start = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(d)
        direction = rng.standard_normal(d)
        shifted = start + offset * direction / np.linalg.norm(direction)
        first = simulate_diffusion(spec, start, grid, seed, increments=increments).base[:, -1]
        second = simulate_diffusion(spec, shifted, grid, seed, increments=increments).base[:, -1]
        quotient = np.sum((first - second) ** 2, axis=1) / np.sum((start - shifted) ** 2)
        ratios[trial] = np.mean(quotient)
        errors[trial] = np.std(quotient) / np.sqrt(max(1, path_count - 1))
    worst_pair = int(np.argmax(ratios))
    return FlowContinuity(float(ratios[worst_pair]), float(errors[worst_pair]), ratios)
