"""Uncertainty quantification from the kNN conditional distribution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConsistencyError, KnnSamplerError
from .imputers import EmpiricalConditional


class InfeasibleLevelError(KnnSamplerError, ValueError):
    pass


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    nominal: float

    def contains(self, value: float) -> bool:
        """Strict interior membership."""
        return self.lower < value < self.upper


def _support(conditional) -> np.ndarray:
    if isinstance(conditional, EmpiricalConditional):
        return conditional.support
    return np.asarray(conditional, dtype=float).reshape(-1)


def conditional_probability(conditional, set_lower: float = -math.inf, set_upper: float = math.inf) -> float:
    """Fraction of neighbour responses in the open interval ``(set_lower, set_upper)``."""
    if not set_lower < set_upper:
        raise ValueError("set_lower must be below set_upper")
    y = _support(conditional)
    return float(np.count_nonzero((y > set_lower) & (y < set_upper)) / y.shape[0])


def interval_rank(k: int, alpha: float) -> int:
    return math.ceil(k * alpha / 2 - 1e-12)


def prediction_interval(conditional, alpha: float) -> PredictionInterval:
    """Interval between the r-th smallest and r-th largest neighbour responses.

    ``r = ceil(k * alpha / 2)``, so k=200 and alpha=0.05 give the 5th smallest
    and 5th largest values.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    y = np.sort(_support(conditional))
    k = y.shape[0]
    r = interval_rank(k, alpha)
    if r < 1 or 2 * r > k:
        raise InfeasibleLevelError(f"k={k} neighbours cannot support level {1 - alpha:g} (rank {r})")
    return PredictionInterval(lower=float(y[r - 1]), upper=float(y[k - r]), nominal=1.0 - alpha)


def conditional_std(conditional) -> float:
    """Standard deviation of the empirical measure (denominator k)."""
    return float(np.std(_support(conditional)))


def coverage_probability(intervals: Sequence[PredictionInterval], truths) -> float:
    truths = np.asarray(truths, dtype=float).reshape(-1)
    if len(intervals) != truths.shape[0]:
        raise ConsistencyError(f"{len(intervals)} intervals for {truths.shape[0]} truths")
    if truths.shape[0] == 0:
        raise ConsistencyError("no intervals to evaluate")
    hits = sum(iv.contains(t) for iv, t in zip(intervals, truths))
    return hits / truths.shape[0]
