"""Out-of-sample fit metrics and coefficient-bias summaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateDataError

__all__ = ["r_squared", "rmse", "AbsBiasSummary", "abs_bias_summary"]


def _pair(actual, predicted):
    a = np.asarray(actual, dtype=np.float64).ravel()
    b = np.asarray(predicted, dtype=np.float64).ravel()
    if a.shape != b.shape or len(a) < 2:
        raise DataError("actual and predicted must be equal-length vectors, n >= 2")
    return a, b


def r_squared(actual, predicted) -> float:
    """1 - SS_residual / SS_total; undefined for a constant actual."""
    a, b = _pair(actual, predicted)
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateDataError("R^2 undefined: actual values are constant")
    return 1.0 - float(np.sum((a - b) ** 2)) / ss_tot


def rmse(actual, predicted) -> float:
    a, b = _pair(actual, predicted)
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass(frozen=True, eq=False)
class AbsBiasSummary:
    """Elementwise |estimated - truth| with its sum and sorted CDF samples."""

    per_coef: np.ndarray
    total: float
    cdf_samples: np.ndarray


def abs_bias_summary(estimated, truth) -> AbsBiasSummary:
    est = np.asarray(estimated, dtype=np.float64).ravel()
    tru = np.asarray(truth, dtype=np.float64).ravel()
    if est.shape != tru.shape:
        raise DataError("estimated and truth must have equal length")
    per = np.abs(est - tru)
    return AbsBiasSummary(
        per_coef=per, total=float(per.sum()), cdf_samples=np.sort(per)
    )
