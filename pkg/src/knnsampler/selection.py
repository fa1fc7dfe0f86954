"""Choice of k by leave-one-out cross-validation of kNN regression."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import BoundsError, Dataset, RngStream
from .neighbors import NeighborIndex, order_with_ties, pairwise_distances, query_knn

# stream id reserved for selection; replicate/unit ids stay far below it
SELECTION_STREAM = 2**63
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class LoocvReport:
    k_grid: tuple[int, ...]
    loo_mse: tuple[float, ...]
    k_star: int

    def to_dict(self) -> dict:
        return {"k_grid": list(self.k_grid), "loo_mse": list(self.loo_mse), "k_star": self.k_star}


def default_k_grid(n: int) -> list[int]:
    """Powers of two up to n/2 plus ceil(n^(2/3)), capped at n - 1."""
    cap = max(1, n - 1)
    grid = {1}
    k = 2
    while k <= n // 2:
        grid.add(k)
        k *= 2
    grid.add(math.ceil(n ** (2.0 / 3.0) - 1e-9))
    return sorted(g for g in grid if g <= cap)


def _validate(x: np.ndarray, y: np.ndarray, k_grid) -> tuple[int, ...]:
    n = x.shape[0]
    if n < 2:
        raise BoundsError("leave-one-out selection needs at least 2 observed units")
    grid = tuple(sorted({int(k) for k in k_grid}))
    if not grid or grid[0] < 1:
        raise BoundsError("k_grid must contain positive integers")
    if grid[-1] > n - 1:
        raise BoundsError(f"k={grid[-1]} exceeds n - 1 = {n - 1}")
    return grid


def _report(grid: tuple[int, ...], errors: np.ndarray) -> LoocvReport:
    mse = tuple(float(np.mean(np.ascontiguousarray(errors[:, g]))) for g in range(len(grid)))
    best = min(range(len(grid)), key=lambda g: (mse[g], grid[g]))
    return LoocvReport(k_grid=grid, loo_mse=mse, k_star=grid[best])


def loocv_select_k(x, y, k_grid=None, rng: RngStream | None = None, *, workers: int = 1) -> LoocvReport:
    """Leave-one-out MSE of the kNN mean for every k in ``k_grid``.

    One neighbour retrieval of depth ``max(k_grid)`` per unit serves the whole
    grid: predictions for each k are running means along the ordered list.
    Ties follow :func:`~knnsampler.neighbors.order_with_ties` with stream
    ``rng.derive(i)`` for unit ``i``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = x.shape[0]
    grid = _validate(x, y, default_k_grid(n) if k_grid is None else k_grid)
    depth = grid[-1]
    cols = np.asarray(grid) - 1
    errors = np.empty((n, len(grid)))
    rows = max(1, _CHUNK_ELEMENTS // (n * x.shape[1]))

    def work(start: int) -> None:
        stop = min(start + rows, n)
        d = pairwise_distances(x, x[start:stop])
        local = np.arange(stop - start)
        d[local, start + local] = np.inf
        if depth < n - 1:
            part = np.argpartition(d, depth, axis=1)[:, : depth + 1]
        else:
            part = np.argsort(d, axis=1)[:, : depth + 1]
        pd = np.take_along_axis(d, part, axis=1)
        o = np.argsort(pd, axis=1)
        nbr = np.take_along_axis(part, o, axis=1)
        sd = np.take_along_axis(pd, o, axis=1)
        tied = np.any(sd[:, 1:] == sd[:, :-1], axis=1)
        for r in np.flatnonzero(tied):
            i = start + r
            row = d[r].copy()
            idx = np.concatenate((np.arange(i), np.arange(i + 1, n)))
            nbr[r, :depth], _ = order_with_ties(idx, row[idx], depth, None if rng is None else rng.derive(i))
        cum = np.cumsum(y[nbr[:, :depth]], axis=1)
        pred = cum[:, cols] / np.asarray(grid, dtype=float)
        errors[start:stop] = (pred - y[start:stop, None]) ** 2

    starts = range(0, n, rows)
    if workers <= 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    return _report(grid, errors)


def loocv_naive(x, y, k_grid, rng: RngStream | None = None) -> LoocvReport:
    """Reference implementation: a fresh leave-one-out index and query per (unit, k)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = x.shape[0]
    grid = _validate(x, y, k_grid)
    errors = np.empty((n, len(grid)))
    for i in range(n):
        keep = np.concatenate((np.arange(i), np.arange(i + 1, n)))
        index = NeighborIndex(x[keep])
        for g, k in enumerate(grid):
            nl = query_knn(index, x[i], k, None if rng is None else rng.derive(i))
            total = 0.0
            for j in nl.indices:
                total += y[keep[j]]
            errors[i, g] = (total / k - y[i]) ** 2
    return _report(grid, errors)


def select_k(dataset: Dataset, master_seed: int = 0, k_grid=None, *, workers: int | None = None) -> LoocvReport:
    dataset.require_observed()
    rng = RngStream(master_seed, SELECTION_STREAM)
    return loocv_select_k(dataset.x_obs, dataset.y_obs, k_grid, rng, workers=workers or 1)

