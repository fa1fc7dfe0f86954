"""Empirical checks of the kNN conditional distribution's MMD consistency.

The experiment draws ``n`` observed pairs, forms the kNN conditional at a
fixed covariate, and measures its squared MMD to a large Monte Carlo sample of
the true conditional.  With ``k ~ c * n^(2/(2+d))`` the error should fall
roughly like ``n^(-2/(2+d))`` (up to a log factor); with ``k`` fixed it should
not fall at all.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigurationError, KnnSamplerError, RngStream
from .datagen import Setup, chisq2, gen_noisy_ring, generate
from .embedding import Kernel, WeightedSample, knn_embedding_error, median_heuristic, reference_self_term
from .imputers import knn_conditional
from .neighbors import build_index

REPORT_SCHEMA_VERSION = 1
REFERENCE_STREAM = 2**63 + 1
RING_WINDOW = 0.01
_RING_BATCH = 1_000_000
_RING_BUDGET_FACTOR = 5000


class ReferenceInfeasibleError(KnnSamplerError, RuntimeError):
    pass


@dataclass
class ConvergenceReport:
    setup: str
    query_x: float
    n_grid: list[int]
    k_values: list[int]
    k_rule: dict
    mmd2_mean: list[float]
    mmd2_std: list[float]
    mmd2_values: list[list[float]]
    fitted_slope: float
    replicates: int
    reference_size: int
    kernel_alpha: float
    master_seed: int
    # documentation only: the bound's constants are not estimable from data
    bound_constants: dict = field(
        default_factory=lambda: {"C3": None, "lambda": None, "delta": None, "C_dist": None, "V_B": None}
    )
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ConvergenceReport:
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def export(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def k_for(n: int, c: float, d: float) -> int:
    return max(1, int(round(c * n ** (2.0 / (2.0 + d)))))


def build_reference(setup, query_x: float, size: int, master_seed: int = 0) -> WeightedSample:
    """Monte Carlo sample of the true conditional of y at ``query_x``.

    Setup 1 is sampled exactly (``query_x + chi2(2)``).  For the ring the
    responses of generated units with ``|x - query_x| <= 0.01`` are kept.
    """
    setup = Setup.parse(setup)
    gen = RngStream(master_seed, REFERENCE_STREAM).generator()
    if setup is Setup.LINEAR_CHISQ:
        return WeightedSample.uniform(query_x + chisq2(gen, size))
    kept: list[np.ndarray] = []
    total = generated = 0
    while total < size:
        if generated >= _RING_BUDGET_FACTOR * size:
            raise ReferenceInfeasibleError(
                f"only {total} of {size} reference points within {RING_WINDOW} of x={query_x} after {generated} draws"
            )
        x, y = gen_noisy_ring(_RING_BATCH, gen)
        generated += _RING_BATCH
        hit = y[np.abs(x[:, 0] - query_x) <= RING_WINDOW]
        kept.append(hit)
        total += hit.shape[0]
    return WeightedSample.uniform(np.concatenate(kept)[:size])


def _slope(n_grid, means) -> float:
    means = np.asarray(means, float)
    if len(n_grid) < 2 or np.any(means <= 0):
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(n_grid, float)), np.log(means), 1)[0])


def run_convergence_experiment(
    setup,
    query_x: float,
    n_grid,
    replicates: int = 10,
    c: float = 1.0,
    d: float = 1.0,
    reference_size: int = 100_000,
    kernel: Kernel | None = None,
    master_seed: int = 0,
    *,
    fixed_k: int | None = None,
    reference: WeightedSample | None = None,
    workers: int = 1,
) -> ConvergenceReport:
    """Mean squared MMD of the kNN conditional over an increasing sample-size grid."""
    setup = Setup.parse(setup)
    n_grid = [int(n) for n in n_grid]
    if not n_grid or any(b <= a for a, b in zip(n_grid, n_grid[1:])) or n_grid[0] < 1:
        raise ConfigurationError("n_grid must be a strictly increasing list of positive sizes")
    if replicates < 1:
        raise ConfigurationError("replicates must be positive")
    if fixed_k is None:
        if c * n_grid[0] ** (2.0 / (2.0 + d)) < 1:
            raise ConfigurationError("c * min(n)^(2/(2+d)) must be at least 1")
        ks = [k_for(n, c, d) for n in n_grid]
    else:
        ks = [int(fixed_k)] * len(n_grid)
    for n, k in zip(n_grid, ks):
        if not 1 <= k <= n:
            raise ConfigurationError(f"k={k} infeasible for n={n}")

    if reference is None:
        reference = build_reference(setup, query_x, reference_size, master_seed)
    kernel = kernel or median_heuristic(reference)
    ref_self = reference_self_term(reference, kernel)

    def cell(job: tuple[int, int]) -> float:
        g, r = job
        stream = RngStream(master_seed, r).derive(n_grid[g])
        x, y = generate(setup, n_grid[g], stream.derive(0))
        return knn_embedding_error(
            x, y, [query_x], ks[g], reference, kernel, stream.derive(1), reference_self=ref_self
        )

    jobs = [(g, r) for g in range(len(n_grid)) for r in range(replicates)]
    if workers <= 1:
        results = [cell(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(cell, jobs))
    values = np.asarray(results).reshape(len(n_grid), replicates)
    means = values.mean(axis=1)
    stds = values.std(axis=1, ddof=1) if replicates > 1 else np.full(len(n_grid), np.nan)
    return ConvergenceReport(
        setup=setup.value,
        query_x=float(query_x),
        n_grid=n_grid,
        k_values=ks,
        k_rule={"exponent": 2.0 / (2.0 + d), "c": c, "intrinsic_dim": d, "fixed_k": fixed_k},
        mmd2_mean=[float(v) for v in means],
        mmd2_std=[None if math.isnan(v) else float(v) for v in stds],
        mmd2_values=[[float(v) for v in row] for row in values],
        fitted_slope=_slope(n_grid, means),
        replicates=replicates,
        reference_size=reference.size,
        kernel_alpha=kernel.scale_alpha,
        master_seed=master_seed,
    )


def conditional_sample(setup, n: int, query_x: float, k: int, master_seed: int = 0) -> np.ndarray:
    """Support of the kNN conditional at ``query_x`` from ``n`` fresh pairs."""
    stream = RngStream(master_seed, 0).derive(n)
    x, y = generate(setup, n, stream.derive(0))
    return knn_conditional(build_index(x), y, [query_x], k, stream.derive(1)).support


def histogram_modes(values, bins: int = 50) -> tuple[float, float, float] | None:
    """Heights (left peak, valley, right peak) of the two main histogram modes.

    The first mode is the tallest bin; the second is the local maximum with
    the largest prominence over the valley separating it from the first.
    Returns ``None`` when the histogram has a single local maximum.
    """
    counts, _ = np.histogram(np.asarray(values, float), bins=bins)
    padded = np.concatenate(([-1], counts, [-1]))
    peaks = [i for i in range(bins) if padded[i + 1] > padded[i] and padded[i + 1] >= padded[i + 2]]
    top = int(np.argmax(counts))
    best = None
    for p in peaks:
        if p == top:
            continue
        lo, hi = min(p, top), max(p, top)
        valley = counts[lo : hi + 1].min()
        prominence = counts[p] - valley
        if best is None or prominence > best[0]:
            best = (prominence, lo, valley, hi)
    if best is None:
        return None
    _, lo, valley, hi = best
    return float(counts[lo]), float(valley), float(counts[hi])


def is_bimodal(values, bins: int = 50, ratio: float = 2.0, min_share: float = 0.25) -> bool:
    """Two modes, each at least ``ratio`` times the valley between them.

    The smaller mode must also reach ``min_share`` of the larger one, which
    keeps a bump in a long tail from counting as a mode.
    """
    modes = histogram_modes(values, bins)
    if modes is None:
        return False
    left, valley, right = modes
    small, large = min(left, right), max(left, right)
    return valley * ratio <= small and small >= min_share * large
