"""Distributional and pointwise metrics for imputations."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import ConsistencyError, KnnSamplerError, RngStream

DEFAULT_PERMUTATIONS = 199


class InsufficientSampleError(KnnSamplerError, ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    energy: float
    p_value: float
    rmse: float
    n_permutations: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def joint_sample(covariates, responses) -> np.ndarray:
    """Stack covariates and responses into the (m, p+1) joint vectors z = (x, y)."""
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(responses, dtype=float).reshape(-1, 1)
    if x.shape[0] != y.shape[0]:
        raise ConsistencyError("covariates and responses differ in length")
    return np.hstack([x, y])


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InsufficientSampleError("energy distance needs at least 2 points per sample")
    if a.shape[1] != b.shape[1]:
        raise ConsistencyError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")


def _energy_from_blocks(d_ab_sum: float, d_aa_sum: float, d_bb_sum: float, ma: int, mb: int) -> float:
    return 2.0 * d_ab_sum / (ma * mb) - d_aa_sum / (ma * (ma - 1)) - d_bb_sum / (mb * (mb - 1))


def energy_distance(a, b) -> float:
    """Unbiased (U-statistic) estimate of the squared energy distance.

    Within-sample terms average over ordered pairs i != j with each sample's
    own size in the denominator.  The estimate can be negative.
    """
    a, b = _as_points(a), _as_points(b)
    _check_pair(a, b)
    return _energy_from_blocks(
        cdist(a, b).sum(), cdist(a, a).sum(), cdist(b, b).sum(), a.shape[0], b.shape[0]
    )


def _split_statistic(d: np.ndarray, labels: np.ndarray, ma: int, mb: int) -> float:
    ia, ib = labels[:ma], labels[ma:]
    return _energy_from_blocks(
        d[np.ix_(ia, ib)].sum(), d[np.ix_(ia, ia)].sum(), d[np.ix_(ib, ib)].sum(), ma, mb
    )


def permutation_test(a, b, n_permutations: int = DEFAULT_PERMUTATIONS, rng: RngStream | None = None) -> tuple[float, float]:
    """Energy statistic and its permutation p-value.

    The pooled sample is relabelled ``n_permutations`` times (group sizes
    preserved); ``p = (1 + #{permuted >= observed}) / (1 + n_permutations)``.
    """
    a, b = _as_points(a), _as_points(b)
    _check_pair(a, b)
    if n_permutations < 1:
        raise ValueError("n_permutations must be positive")
    gen = (rng or RngStream(0)).generator()
    pooled = np.vstack([a, b])
    ma, mb = a.shape[0], b.shape[0]
    d = cdist(pooled, pooled)
    observed = _split_statistic(d, np.arange(ma + mb), ma, mb)
    exceed = 0
    for _ in range(n_permutations):
        if _split_statistic(d, gen.permutation(ma + mb), ma, mb) >= observed:
            exceed += 1
    return observed, (1 + exceed) / (1 + n_permutations)


def permutation_pvalue(a, b, n_permutations: int = DEFAULT_PERMUTATIONS, rng: RngStream | None = None) -> float:
    return permutation_test(a, b, n_permutations, rng)[1]


def rmse(imputed, truth) -> float:
    imputed = np.asarray(imputed, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if imputed.shape != truth.shape:
        raise ConsistencyError(f"{imputed.shape[0]} imputations for {truth.shape[0]} truths")
    if imputed.shape[0] == 0:
        raise ConsistencyError("rmse of empty lists")
    return float(np.sqrt(np.mean((imputed - truth) ** 2)))


def evaluate(
    covariates, truth, imputed, n_permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0
) -> EvalReport:
    """Energy distance, permutation p-value and RMSE of one imputation run."""
    z_true = joint_sample(covariates, truth)
    z_imp = joint_sample(covariates, imputed)
    energy, p = permutation_test(z_true, z_imp, n_permutations, RngStream(seed))
    return EvalReport(energy=energy, p_value=p, rmse=rmse(imputed, truth), n_permutations=n_permutations, seed=seed)
