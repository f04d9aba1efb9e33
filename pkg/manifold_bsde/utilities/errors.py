# -*- coding: utf-8 -*-
"""Exception hierarchy

Every failure raised by the library derives from ``ManifoldBSDEError`` so the command line front end can catch one
type, record the failing stage and keep partial outputs. The secondary bases let callers keep catching the builtin
category (``ValueError``, ``ArithmeticError`` ...) they would expect from numpy-style code.
"""
from typing import Optional, Sequence


class ManifoldBSDEError(Exception):
    """ Base class of all library errors. """


class DomainError(ManifoldBSDEError, ValueError):
    """ A point lies outside the set where the operation is defined. """


class MetricError(DomainError):
    """ A metric sample failed positivity. """


class EscapeError(DomainError):
    """ A geodesic left the chart bounds before the requested time. """

    def __init__(self, message: str, exit_time: float, point: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.exit_time = exit_time
        self.point = None if point is None else list(point)


class ExtrapolationError(DomainError):
    """ A path left the working window of a space-time field. """


class ConditioningError(ManifoldBSDEError, ArithmeticError):
    """ A metric or regression matrix is numerically singular. """


class DimensionError(ManifoldBSDEError, ValueError):
    """ Array shapes disagree with the declared dimensions. """


class ParameterError(ManifoldBSDEError, ValueError):
    """ A numerical parameter is outside its admissible range. """


class ConfigError(ManifoldBSDEError, ValueError):
    """ Invalid configuration: unknown keys, CFL violation, bad collar ... """


class PreconditionError(ManifoldBSDEError, ValueError):
    """ Inputs violate an operation's precondition. """


class StatisticsError(ManifoldBSDEError, ValueError):
    """ Too few samples for a statistical test. """


class ConvergenceError(ManifoldBSDEError, RuntimeError):
    """ An iteration did not reach its tolerance. """

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class HorizonError(ManifoldBSDEError, RuntimeError):
    """ Too many exit-time paths were censored by the horizon. """


class NumericError(ManifoldBSDEError, FloatingPointError):
    """ A non-finite value appeared during time stepping. """

    def __init__(self, message: str, step: int, node: Optional[Sequence[int]] = None):
        super().__init__(message)
        self.step = step
        self.node = None if node is None else tuple(int(i) for i in node)


class BlowUpError(NumericError):
    """ The parabolic solver produced a non-finite value. """


class BasisError(ManifoldBSDEError, ArithmeticError):
    """ Regression design matrix is rank deficient. """


class AccuracyError(ManifoldBSDEError, ArithmeticError):
    """ A quadrature did not settle under refinement. """


class StageError(ManifoldBSDEError, RuntimeError):
    """ Wraps a failure inside one stage of a scenario run. """

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
