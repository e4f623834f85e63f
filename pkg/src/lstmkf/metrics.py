"""Evaluation metrics: normalized squared errors, confidence bands over
seeds, and the sustainable-prediction criterion for the binary task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ZeroVarianceError",
    "HorizonOutOfRangeError",
    "target_variance",
    "nse",
    "knse",
    "ConfidenceBand",
    "confidence_band",
    "sustainable_prediction",
]


class ZeroVarianceError(ValueError):
    """Target stream has zero variance; NSE is undefined."""


class HorizonOutOfRangeError(ValueError):
    """Forecast horizon leaves no scorable steps."""


def target_variance(targets: np.ndarray) -> float:
    """Population variance of the target stream.

    For multi-dimensional targets this is the mean squared deviation
    from the per-dimension mean, summed over dimensions, which makes
    NSE = mean ||e||^2 / variance dimensionless in every case.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if len(targets) < 2:
        raise ZeroVarianceError("need at least two targets")
    if np.all(targets == targets[0]):
        # Checked exactly: the mean of identical values can pick up an
        # ulp of rounding, which would make the variance spuriously > 0.
        raise ZeroVarianceError("target stream is constant")
    centered = targets - targets.mean(axis=0)
    var = float(np.mean(np.sum(centered * centered, axis=1)))
    if var <= 0.0:
        raise ZeroVarianceError("target stream is constant")
    return var


def nse(sq_errors: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error normalized by the target stream's variance."""
    sq_errors = np.asarray(sq_errors, dtype=np.float64)
    return float(np.mean(sq_errors)) / target_variance(targets)


def knse(forecast_sq_errors: np.ndarray, targets: np.ndarray, k: int) -> float:
    """Normalized k-step-ahead squared error.

    forecast_sq_errors[t] is the squared error of the frozen-weight
    k-step forecast made at step t (NaN on the last k steps where no
    target exists); mean over the T-k valid entries, normalized by the
    variance of the full target stream.
    """
    errs = np.asarray(forecast_sq_errors, dtype=np.float64)
    valid = ~np.isnan(errs)
    if k < 1 or not valid.any():
        raise HorizonOutOfRangeError(f"horizon {k} leaves no scorable steps")
    return float(np.mean(errs[valid])) / target_variance(targets)


@dataclass(frozen=True)
class ConfidenceBand:
    """Per-timestep 5th/95th percentile curves plus their time averages."""

    p5: np.ndarray
    p95: np.ndarray
    lo: float
    hi: float


def confidence_band(curves: np.ndarray) -> ConfidenceBand:
    """Empirical 90% band across seeds, per timestep.

    curves has shape (seeds, T). Percentiles use linear interpolation
    between order statistics; the reported interval is the time average
    of the two percentile curves.
    """
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 2 or curves.shape[0] < 2:
        raise ValueError("need curves from at least two seeds")
    p5 = np.percentile(curves, 5, axis=0)
    p95 = np.percentile(curves, 95, axis=0)
    return ConfidenceBand(p5, p95, float(p5.mean()), float(p95.mean()))


def sustainable_prediction(
    correct: np.ndarray, window: int = 500, limit: int = 100_000
):
    """First symbol (1-based) of the earliest run of `window` consecutive
    correct decisions, or None when no such run starts within the first
    `limit` symbols."""
    correct = np.asarray(correct, dtype=bool)
    streak = 0
    for t, ok in enumerate(correct):
        if ok:
            streak += 1
            if streak >= window:
                start = t - window + 2  # 1-based index of the run's first symbol
                return start if start <= limit else None
        else:
            streak = 0
            if t + 1 > limit:  # no run can start at or before `limit` anymore
                return None
    return None
