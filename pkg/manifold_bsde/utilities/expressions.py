# -*- coding: utf-8 -*-
"""Expression strings from JSON configs, evaluated with numexpr.

Variables are ``x1..xn`` for chart coordinates, ``b1..bd`` for base points and ``z11, z12, ...`` (row, column) for
tangent matrices. Expressions must be elementwise, so numexpr vectorises them over any batch shape.
"""
import re
from typing import Dict, Sequence

import numexpr as ne
import numpy as np

from .errors import ConfigError

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_FUNCTIONS = {
    "exp", "log", "sqrt", "sin", "cos", "tan", "sinh", "cosh", "tanh", "arctan", "arcsin", "arccos",
    "arcsinh", "arccosh", "arctanh", "abs", "where", "log1p", "expm1",
}


def check_expression(expression: str, allowed: Sequence[str]) -> str:
    """ Reject names that are neither numexpr functions nor declared variables. """
    if not isinstance(expression, str) or not expression.strip():
        raise ConfigError(f"expected a non-empty expression string, got {expression!r}")
    unknown = {name for name in _NAME.findall(expression) if name not in _FUNCTIONS and name not in allowed}
    # numeric literals such as 1e-3 leave an 'e' token behind
    unknown -= {"e"} if re.search(r"\de[-+]?\d", expression) else set()
    if unknown:
        raise ConfigError(f"unknown names {sorted(unknown)} in expression {expression!r}")
    return expression


def evaluate(expression: str, variables: Dict[str, np.ndarray], shape) -> np.ndarray:
    """ Evaluate one expression; constants are broadcast to ``shape``. """
    value = ne.evaluate(expression, local_dict=variables)
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


def coordinate_variables(points: np.ndarray, prefix: str = "x") -> Dict[str, np.ndarray]:
    """ Split (..., n) into {'x1': (...), 'x2': (...)} """
    points = np.asarray(points, dtype=float)
    return {f"{prefix}{i + 1}": np.ascontiguousarray(points[..., i]) for i in range(points.shape[-1])}


def matrix_variables(z: np.ndarray, prefix: str = "z") -> Dict[str, np.ndarray]:
    z = np.asarray(z, dtype=float)
    return {
        f"{prefix}{i + 1}{j + 1}": np.ascontiguousarray(z[..., i, j])
        for i in range(z.shape[-2])
        for j in range(z.shape[-1])
    }


class VectorExpression:
    """ A vector-valued map given by one expression per output component. """

    def __init__(self, components: Sequence[str], variable_names: Sequence[str]):
        self.variable_names = list(variable_names)
        self.components = [check_expression(c, self.variable_names) for c in components]

    def __call__(self, variables: Dict[str, np.ndarray], batch_shape) -> np.ndarray:
        return np.stack([evaluate(c, variables, batch_shape) for c in self.components], axis=-1)


class MatrixExpression:
    """ An n x n symmetric table of expressions in x1..xn. """

    def __init__(self, table: Sequence[Sequence[str]], dimension: int):
        names = [f"x{i + 1}" for i in range(dimension)]
        if len(table) != dimension or any(len(row) != dimension for row in table):
            raise ConfigError(f"metric table must be {dimension}x{dimension}")
        self.dimension = dimension
        self.table = [[check_expression(str(cell), names) for cell in row] for row in table]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        batch = points.shape[:-1]
        variables = coordinate_variables(points)
        out = np.empty(batch + (self.dimension, self.dimension))
        for i in range(self.dimension):
            for j in range(self.dimension):
                out[..., i, j] = evaluate(self.table[i][j], variables, batch)
        return 0.5 * (out + np.swapaxes(out, -1, -2))
