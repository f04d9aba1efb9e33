# -*- coding: utf-8 -*-
"""General utility functions: config string parsing, resource lookup, finite differences, digests and exports."""
import concurrent.futures
import hashlib
import json
import os
import sys
from typing import Callable, Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

ArrayFn = Callable[[np.ndarray], np.ndarray]


def str2list(string: str, type_func) -> List:
    """ Takes a Python list-formatted string and returns a list of elements of type type_func """
    return list(map(type_func, string.strip("()[]").split(",")))


def resource_path(relative_path) -> str:
    """ Get absolute path to a resource shipped next to the package, works for dev and for PyInstaller """
    try:
        # PyInstaller creates a temp folder and stores path in _MEIPASS
        base_path = sys._MEIPASS  # pylint: disable=protected-access,no-member
    except Exception:  # pylint: disable=broad-except
        base_path = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

    return os.path.join(base_path, relative_path)


def smootherstep(u: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """ Quintic S5(u) = 6u^5 - 15u^4 + 10u^3 on [0, 1], clamped outside. C2 everywhere. """
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def relative_steps(points: np.ndarray, step: float) -> np.ndarray:
    """ Per-point finite-difference steps step*(1+|x|), shape (m, 1). """
    points = np.atleast_2d(points)
    return step * (1.0 + np.linalg.norm(points, axis=1))[:, None]


def batched_gradient(fn: ArrayFn, points: np.ndarray, step: float) -> np.ndarray:
    """ Central-difference gradient of a batched scalar function fn: (m, D) -> (m,). Returns (m, D). """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, dim = points.shape
    h = relative_steps(points, step)
    grad = np.empty((m, dim))
    for axis in range(dim):
        shift = np.zeros(dim)
        shift[axis] = 1.0
        grad[:, axis] = (fn(points + h * shift) - fn(points - h * shift)) / (2.0 * h[:, 0])
    return grad


def batched_hessian(fn: ArrayFn, points: np.ndarray, step: float) -> np.ndarray:
    """ Central-difference Hessian of a batched scalar function. Returns symmetric (m, D, D). """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, dim = points.shape
    h = relative_steps(points, step)
    centre = fn(points)
    eye = np.eye(dim)
    hess = np.empty((m, dim, dim))
    for j in range(dim):
        e_j = h * eye[j]
        hess[:, j, j] = (fn(points + e_j) - 2.0 * centre + fn(points - e_j)) / h[:, 0] ** 2
        for k in range(j + 1, dim):
            e_k = h * eye[k]
            mixed = (
                fn(points + e_j + e_k)
                - fn(points + e_j - e_k)
                - fn(points - e_j + e_k)
                + fn(points - e_j - e_k)
            ) / (4.0 * h[:, 0] ** 2)
            hess[:, j, k] = mixed
            hess[:, k, j] = mixed
    return hess


def directional_second_difference(fn: ArrayFn, points: np.ndarray, directions: np.ndarray, step: float) -> np.ndarray:
    """ (f(y+hu) - 2f(y) + f(y-hu)) / h^2 for batched points and directions. """
    points = np.atleast_2d(points)
    directions = np.atleast_2d(directions)
    h = relative_steps(points, step)
    return (fn(points + h * directions) - 2.0 * fn(points) + fn(points - h * directions)) / h[:, 0] ** 2


def directional_difference(fn: ArrayFn, points: np.ndarray, directions: np.ndarray, step: float) -> np.ndarray:
    """ Central first difference of fn along directions. """
    points = np.atleast_2d(points)
    directions = np.atleast_2d(directions)
    h = relative_steps(points, step)
    return (fn(points + h * directions) - fn(points - h * directions)) / (2.0 * h[:, 0])


def parallel_map(func: Callable, items: Iterable, workers: int = 1) -> List:
    """ Ordered map, threaded when more than one worker is configured. """
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [func(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(func, items))


def file_digest(path: str) -> str:
    """ sha256 of a file's bytes """
    sha = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


def config_hash(config: dict) -> str:
    """ Stable sha256 of a JSON-serialisable dict. """
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=to_jsonable)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def to_jsonable(value):
    """ json.dumps default hook for numpy scalars and arrays. """
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path: str, payload: dict) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=to_jsonable)
    return path


def write_frame(path: str, columns: Sequence[str], rows: np.ndarray) -> str:
    """ Write a 2-D numeric table as CSV with a fixed float format so reruns are byte-identical. """
    frame = pd.DataFrame(np.asarray(rows, dtype=float), columns=list(columns))
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
