"""Exact k-nearest-neighbour search with randomized tie-breaking."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import BoundsError, ConsistencyError, KnnSamplerError, RngStream

# relative slack when turning a tree distance into a ball radius; float error
# of either distance computation is ~1e-16 relative, far below this
_RADIUS_SLACK = 1e-9


class BuildError(KnnSamplerError, ValueError):
    pass


class Acceleration(str, enum.Enum):
    BRUTE_FORCE = "brute_force"
    SPATIAL_TREE = "spatial_tree"


def distances_to(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Euclidean distances from ``query`` to every row of ``points``.

    Every distance in the package goes through this function or
    :func:`pairwise_distances`, which produce bit-identical values, so tie
    detection by exact equality is consistent everywhere.
    """
    diff = query[None, :] - points
    return np.sqrt(np.add.reduce(diff * diff, axis=-1))


def pairwise_distances(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - points[None, :, :]
    return np.sqrt(np.add.reduce(diff * diff, axis=-1))


@dataclass(frozen=True)
class NeighborList:
    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self) -> int:
        return int(self.indices.shape[0])


class NeighborIndex:
    """Query structure over the observed covariates.

    ``spatial_tree`` only narrows the candidate set; final distances and the
    ordering are always computed by the same code as ``brute_force``, so both
    modes return identical results for identical random streams.
    """

    def __init__(self, points, acceleration: Acceleration | str = Acceleration.BRUTE_FORCE, metric: str = "euclidean"):
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise BuildError("points must be a non-empty 2-D array")
        if not np.all(np.isfinite(pts)):
            raise BuildError("points must be finite")
        if metric != "euclidean":
            raise BuildError(f"unsupported metric {metric!r}")
        pts.setflags(write=False)
        self.points = pts
        self.metric = metric
        self.acceleration = Acceleration(acceleration)
        self._tree = cKDTree(pts, balanced_tree=True) if self.acceleration is Acceleration.SPATIAL_TREE else None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _check_query(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=float).reshape(-1)
        if q.shape[0] != self.dim:
            raise ConsistencyError(f"query has dimension {q.shape[0]}, index has {self.dim}")
        return q

    def candidates(self, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices (ascending) and distances of every point within the k-th distance."""
        if self._tree is None or k == self.n:
            d = distances_to(self.points, query)
            if k < self.n:
                kth = np.partition(d, k - 1)[k - 1]
                idx = np.flatnonzero(d <= kth)
                return idx, d[idx]
            return np.arange(self.n), d
        dt, _ = self._tree.query(query, k=[k])
        radius = float(dt[-1]) * (1.0 + _RADIUS_SLACK) + 1e-300
        idx = np.sort(np.asarray(self._tree.query_ball_point(query, radius), dtype=np.int64))
        d = distances_to(self.points[idx], query)
        kth = np.partition(d, k - 1)[k - 1]
        keep = d <= kth
        return idx[keep], d[keep]


def build_index(points, acceleration: Acceleration | str = Acceleration.BRUTE_FORCE) -> NeighborIndex:
    if isinstance(points, (list, tuple)) and points and np.ndim(points[0]) == 1:
        if len({len(p) for p in points}) != 1:
            raise BuildError("points have mismatched dimensions")
    return NeighborIndex(points, acceleration)


def order_with_ties(
    idx: np.ndarray, dist: np.ndarray, k: int, rng: RngStream | None
) -> tuple[np.ndarray, np.ndarray]:
    """First ``k`` of the candidates sorted by distance, ties shuffled.

    ``idx`` must be ascending.  Every run of equal distances that starts
    before rank ``k`` is permuted with a stream keyed by the run's starting
    rank, which makes the result for depth ``k`` a prefix of the result for
    any larger depth.  With ``rng=None`` ties keep index order.
    """
    order = np.argsort(dist, kind="stable")
    idx = idx[order]
    dist = dist[order]
    if rng is not None and dist.shape[0] > 1:
        same = dist[1:] == dist[:-1]
        if np.any(same[: max(k, 1)]):
            starts = np.flatnonzero(np.concatenate(([True], ~same)))
            ends = np.append(starts[1:], dist.shape[0])
            idx = idx.copy()
            for s, e in zip(starts, ends):
                if s >= k:
                    break
                if e - s > 1:
                    perm = rng.derive(int(s)).generator().permutation(e - s)
                    idx[s:e] = idx[s:e][perm]
    return idx[:k], dist[:k]


def query_knn(index: NeighborIndex, query, k: int, rng: RngStream | None) -> NeighborList:
    """The ``k`` nearest observed points to ``query``.

    Among points tied in distance at the boundary rank, membership is chosen
    uniformly at random from ``rng``.
    """
    k = int(k)
    if not 1 <= k <= index.n:
        raise BoundsError(f"k={k} outside 1..{index.n}")
    q = index._check_query(query)
    idx, d = index.candidates(q, k)
    idx, d = order_with_ties(idx, d, k, rng)
    return NeighborList(indices=idx, distances=d)
