"""kNNSampler and the baseline imputers it is benchmarked against."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigurationError,
    Dataset,
    ImputationRun,
    KnnSamplerError,
    Method,
    MethodConfig,
    RngStream,
    unit_stream,
)
from .neighbors import NeighborIndex, build_index, query_knn

# sub-stream keys under each unit's stream
_TIES = 1
_DRAW = 2


class SingularFitError(KnnSamplerError, ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalConditional:
    """Uniform distribution over the responses of the k nearest neighbours.

    ``support`` is in neighbour order; ``distances`` are the matching covariate
    distances (kept for the kNN x KDE weights).
    """

    support: np.ndarray
    indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self) -> None:
        if self.support.shape[0] < 1:
            raise ValueError("empty conditional distribution")

    @property
    def k(self) -> int:
        return int(self.support.shape[0])

    @property
    def mass(self) -> np.ndarray:
        return np.full(self.k, 1.0 / self.k)


def knn_conditional(index: NeighborIndex, responses, query, k: int, rng: RngStream | None) -> EmpiricalConditional:
    nl = query_knn(index, query, k, rng)
    responses = np.asarray(responses, dtype=float)
    return EmpiricalConditional(support=responses[nl.indices], indices=nl.indices, distances=nl.distances)


def impute_sampler(conditional: EmpiricalConditional, rng: RngStream | np.random.Generator) -> float:
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return float(conditional.support[gen.integers(conditional.k)])


def impute_knn_mean(conditional: EmpiricalConditional) -> float:
    return float(np.mean(conditional.support))


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, self.coefficients.shape[0])
        return x @ self.coefficients + self.intercept


def fit_linear(x, y) -> LinearModel:
    """Ordinary least squares with an intercept."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = x.shape
    if n < p + 1:
        raise SingularFitError(f"need at least {p + 1} observations for {p} covariates, got {n}")
    design = np.column_stack([np.ones(n), x])
    beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < p + 1:
        raise SingularFitError("design matrix is rank deficient")
    return LinearModel(coefficients=beta[1:], intercept=float(beta[0]))


def knn_kde_draw(
    conditional: EmpiricalConditional, tau: float, h: float, gen: np.random.Generator
) -> float:
    logits = -tau * conditional.distances**2
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    j = gen.choice(conditional.k, p=weights)
    value = conditional.support[j]
    if h > 0:
        value = value + h * gen.standard_normal()
    return float(value)


def impute_knn_kde(
    index: NeighborIndex, responses, query, k: int, tau: float, h: float, rng: RngStream
) -> float:
    """Soft-weighted neighbour draw plus Gaussian jitter of scale ``h``.

    Neighbour ``j`` is chosen with probability proportional to
    ``exp(-tau * d_j**2)`` among the ``k`` nearest.
    """
    cond = knn_conditional(index, responses, query, k, rng.derive(_TIES))
    return knn_kde_draw(cond, tau, h, rng.derive(_DRAW).generator())


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("KNNSAMPLER_THREADS", "1")))
    except ValueError:
        return 1


def _chunks(m: int, workers: int) -> list[range]:
    size = max(1, -(-m // max(1, workers)))
    return [range(s, min(s + size, m)) for s in range(0, m, size)]


def impute_all(
    dataset: Dataset,
    config: MethodConfig,
    master_seed: int = 0,
    replicate_id: int = 0,
    *,
    workers: int | None = None,
    index: NeighborIndex | None = None,
) -> ImputationRun:
    """Impute every missing unit of ``dataset`` with the configured method.

    Unit ``i`` of replicate ``b`` draws from the stream
    ``(master_seed, b * 2**32 + i)``, so results do not depend on ``workers``.
    ``k="auto"`` is resolved by leave-one-out selection on the observed pairs.
    """
    config = config if isinstance(config, MethodConfig) else MethodConfig(**config)
    if dataset.m == 0:
        return ImputationRun(config, np.empty(0), replicate_id, master_seed, k=None)
    dataset.require_observed()
    method = config.method
    selection = None

    if method is Method.LINEAR:
        model = fit_linear(dataset.x_obs, dataset.y_obs)
        values = np.asarray(model.predict(dataset.x_miss), dtype=float)
        return ImputationRun(config, values, replicate_id, master_seed, k=None)

    k = config.k
    if k == "auto":
        from .selection import select_k

        selection = select_k(dataset, master_seed, workers=workers)
        k = selection.k_star
    elif k is None:
        if method is not Method.KNN_KDE:
            raise ConfigurationError(f"{method.value} needs k")
        k = dataset.n
    if k > dataset.n:
        raise ConfigurationError(f"k={k} exceeds the {dataset.n} observed units")

    if index is None:
        index = build_index(dataset.x_obs)
    y = dataset.y_obs
    values = np.empty(dataset.m)

    def work(units: range) -> None:
        for i in units:
            s = unit_stream(master_seed, replicate_id, i)
            cond = knn_conditional(index, y, dataset.x_miss[i], k, s.derive(_TIES))
            if method is Method.KNN_SAMPLER:
                values[i] = impute_sampler(cond, s.derive(_DRAW))
            elif method is Method.KNN_IMPUTER:
                values[i] = impute_knn_mean(cond)
            else:
                values[i] = knn_kde_draw(cond, config.tau, config.bandwidth_h, s.derive(_DRAW).generator())

    workers = default_workers() if workers is None else workers
    if workers <= 1:
        work(range(dataset.m))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, _chunks(dataset.m, workers)))
    return ImputationRun(config, values, replicate_id, master_seed, k=int(k), selection=selection)


def unit_conditionals(
    dataset: Dataset, k: int, master_seed: int = 0, replicate_id: int = 0, index: NeighborIndex | None = None
) -> list[EmpiricalConditional]:
    """The kNN conditionals :func:`impute_all` samples from, unit by unit."""
    dataset.require_observed()
    if index is None:
        index = build_index(dataset.x_obs)
    return [
        knn_conditional(index, dataset.y_obs, dataset.x_miss[i], k, unit_stream(master_seed, replicate_id, i).derive(_TIES))
        for i in range(dataset.m)
    ]


def warn_if_deterministic(config: MethodConfig, replicates: int) -> None:
    if replicates > 1 and not config.method.stochastic:
        warnings.warn(
            f"{config.method.value} is deterministic; all {replicates} replicates will be identical",
            stacklevel=3,
        )
