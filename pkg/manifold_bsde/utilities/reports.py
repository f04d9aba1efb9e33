# -*- coding: utf-8 -*-
"""Report records shared by the verification and convexity modules."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional

import numpy as np


@dataclass
class VerificationReport:
    """ Outcome of one numerical check. A negative margin is a violation. """

    name: str
    sample_size: int
    margin: float
    tolerance: float
    witness: Optional[List[float]] = None
    details: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.margin = float(self.margin)
        self.tolerance = abs(float(self.tolerance))
        if self.witness is not None:
            self.witness = [float(v) for v in np.ravel(self.witness)]

    @property
    def passed(self) -> bool:
        return bool(self.margin >= -self.tolerance)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def worst(name: str, margins: np.ndarray, witnesses: np.ndarray, tolerance: float, **details) -> VerificationReport:
    """ Build a report from per-sample margins; the witness is the argmin row, or the first NaN row, which fails. """
    margins = np.asarray(margins, dtype=float)
    if margins.size == 0:
        return VerificationReport(name, 0, np.inf, tolerance, None, details)
    missing = np.flatnonzero(np.isnan(margins))
    index = int(missing[0]) if missing.size else int(np.argmin(margins))
    return VerificationReport(name, int(margins.size), float(margins[index]), tolerance,
                              np.ravel(witnesses[index]).tolist(), details)
