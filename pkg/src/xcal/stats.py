"""Distribution and error statistics.

Small, pure functions shared by the calibration engine and the evaluation
reports: empirical CDFs, the two-sample Kolmogorov-Smirnov distance, order
statistics, and pointwise error summaries.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptySample, QOutOfRange


class Ecdf:
    """Right-continuous empirical CDF of a finite sample.

    ``ecdf(t)`` is the fraction of sample points less than or equal to ``t``;
    it is 0 below the sample minimum and 1 at and above the maximum.
    """

    def __init__(self, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise EmptySample("cannot build an ECDF from an empty sample")
        if not np.all(np.isfinite(values)):
            raise ValueError("ECDF sample must be finite")
        self.sorted_values = np.sort(values)
        self.sorted_values.setflags(write=False)
        self.n = int(values.size)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.searchsorted(self.sorted_values, t, side="right") / self.n
        return out if t.ndim else float(out)


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance, sup_t |F_a(t) - F_b(t)|.

    The supremum of a difference of step functions is attained at a jump, so
    evaluating both ECDFs at every sample point of either sample (just after
    the jump, per right continuity) is exact. Differences are formed from
    integer counts on the common denominator n*m, so the result is the
    correctly rounded value of an exact rational. Sorting dominates the cost.
    """
    fa = Ecdf(a)
    fb = Ecdf(b)
    grid = np.concatenate([fa.sorted_values, fb.sorted_values])
    count_a = np.searchsorted(fa.sorted_values, grid, side="right")
    count_b = np.searchsorted(fb.sorted_values, grid, side="right")
    numerator = int(np.max(np.abs(count_a * fb.n - count_b * fa.n)))
    return numerator / (fa.n * fb.n)


def quantile(values, q: float) -> float:
    """Empirical quantile with linear interpolation at position ``q*(n-1)``."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise EmptySample("quantile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise QOutOfRange(f"quantile level must be in [0, 1], got {q}")
    v = np.sort(values)
    pos = q * (v.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, v.size - 1)
    return float(v[lo] + (v[hi] - v[lo]) * (pos - lo))


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise DimensionMismatch(f"length mismatch: {y.size} vs {yhat.size}")
    if y.size == 0:
        raise EmptySample("RMSE of empty vectors")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def abs_error_percentiles(y, yhat, levels=(90, 95, 98)) -> dict[int, float]:
    """Upper percentiles of |y - yhat|, keyed by integer percent level."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise DimensionMismatch(f"length mismatch: {y.size} vs {yhat.size}")
    errors = np.abs(y - yhat)
    return {int(level): quantile(errors, level / 100.0) for level in levels}


def cumulative_series(values, dt: float = 1.0) -> np.ndarray:
    """Running rectangle-rule integral: c_k = dt * sum(values[: k + 1])."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise EmptySample("cumulative series of an empty vector")
    return dt * np.cumsum(values)
