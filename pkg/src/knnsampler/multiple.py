"""Multiple imputation and Rubin's pooling rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConsistencyError, Dataset, ImputationRun, KnnSamplerError, MethodConfig
from .imputers import impute_all, warn_if_deterministic
from .neighbors import build_index


class InsufficientReplicatesError(KnnSamplerError, ValueError):
    pass


@dataclass(frozen=True)
class PooledEstimate:
    point: float
    between_var: float
    within_var_mean: float
    total_var: float
    B: int

    @property
    def std_error(self) -> float:
        return float(np.sqrt(self.total_var))


def impute_multiple(
    dataset: Dataset, config: MethodConfig, B: int, master_seed: int = 0, *, workers: int | None = None
) -> list[ImputationRun]:
    """B independent imputation runs; replicate ``b`` uses ``replicate_id=b``.

    With ``k="auto"`` the selection is done once and shared by all replicates.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    warn_if_deterministic(config, B)
    if config.k == "auto" and dataset.m > 0:
        from .selection import select_k

        report = select_k(dataset, master_seed, workers=workers)
        config = MethodConfig(config.method, report.k_star, config.tau, config.bandwidth_h)
    else:
        report = None
    index = build_index(dataset.x_obs) if dataset.n and dataset.m else None
    runs = [impute_all(dataset, config, master_seed, b, workers=workers, index=index) for b in range(B)]
    for run in runs:
        run.selection = report
    return runs


def completed_responses(dataset: Dataset, run: ImputationRun) -> np.ndarray:
    """All n + m responses with imputations filled in, in source-row order."""
    y = np.empty(dataset.n + dataset.m)
    y[dataset.observed_rows] = dataset.y_obs
    y[dataset.missing_rows] = run.values
    return y


def mean_estimator(y: np.ndarray) -> tuple[float, float]:
    """Sample mean and its squared standard error (sample variance / size)."""
    y = np.asarray(y, dtype=float)
    return float(np.mean(y)), float(np.var(y, ddof=1) / y.shape[0])


def rubin_pool(estimates, within_vars) -> PooledEstimate:
    """Pool B per-replicate estimates with ``T = W + (1 + 1/B) * between``."""
    q = np.asarray(estimates, dtype=float).reshape(-1)
    w = np.asarray(within_vars, dtype=float).reshape(-1)
    if q.shape != w.shape:
        raise ConsistencyError("estimates and within_vars differ in length")
    B = q.shape[0]
    if B < 2:
        raise InsufficientReplicatesError("Rubin's rule needs at least 2 replicates")
    if np.any(w < 0):
        raise ValueError("within-imputation variances must be non-negative")
    between = float(np.var(q, ddof=1))
    within = float(np.mean(w))
    return PooledEstimate(
        point=float(np.mean(q)),
        between_var=between,
        within_var_mean=within,
        total_var=within + (1.0 + 1.0 / B) * between,
        B=B,
    )


def pool_mean(dataset: Dataset, runs: list[ImputationRun]) -> PooledEstimate:
    pairs = [mean_estimator(completed_responses(dataset, r)) for r in runs]
    return rubin_pool([p[0] for p in pairs], [p[1] for p in pairs])
