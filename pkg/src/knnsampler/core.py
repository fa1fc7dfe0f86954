"""Data model, seeded random streams and delimited-text I/O."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FLAG_COLUMN = "__imputed__"
REPLICATE_STRIDE = 2**32
_MISSING_MARKERS = {"", "nan"}


class KnnSamplerError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(KnnSamplerError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ParseError(KnnSamplerError, ValueError):
    pass


class EmptyObservedError(KnnSamplerError, ValueError):
    pass


class ConsistencyError(KnnSamplerError, ValueError):
    pass


class BoundsError(KnnSamplerError, ValueError):
    pass


class ConfigurationError(KnnSamplerError, ValueError):
    pass


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(master_seed, stream_id)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    two streams with equal identifiers produce identical sequences and streams
    with different identifiers are statistically independent.  ``derive``
    returns a child stream that is independent of its parent.
    """

    master_seed: int
    stream_id: int = 0
    subkey: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not (0 <= self.master_seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValueError("master_seed and stream_id must be 64-bit unsigned")

    def derive(self, *keys: int) -> RngStream:
        return RngStream(self.master_seed, self.stream_id, self.subkey + tuple(int(k) for k in keys))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *self.subkey))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def seed64(self) -> int:
        """A 64-bit integer seed drawn from this stream's seed sequence."""
        return int(self.seed_sequence().generate_state(1, np.uint64)[0])


def unit_stream(master_seed: int, replicate_id: int, unit: int) -> RngStream:
    return RngStream(master_seed, replicate_id * REPLICATE_STRIDE + unit)


class Method(str, enum.Enum):
    KNN_SAMPLER = "knn_sampler"
    KNN_IMPUTER = "knn_imputer"
    LINEAR = "linear"
    KNN_KDE = "knn_kde"

    @classmethod
    def parse(cls, name: str | Method) -> Method:
        if isinstance(name, Method):
            return name
        key = str(name).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(m.value.replace("_", "-") for m in cls)
            raise ConfigurationError(f"unknown method {name!r}; valid methods: {valid}") from None

    @property
    def stochastic(self) -> bool:
        return self in (Method.KNN_SAMPLER, Method.KNN_KDE)


@dataclass(frozen=True)
class MethodConfig:
    """Imputation method and its hyperparameters.

    ``k`` is a positive integer, ``"auto"`` (leave-one-out selection) or
    ``None``, which means "all observed units" and is the kNN x KDE default.
    ``tau`` and ``bandwidth_h`` only matter for ``knn_kde``.
    """

    method: Method = Method.KNN_SAMPLER
    k: int | str | None = "auto"
    tau: float = 50.0
    bandwidth_h: float = 0.03

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method.parse(self.method))
        k = self.k
        if isinstance(k, str):
            if k != "auto":
                try:
                    k = int(k)
                except ValueError:
                    raise ConfigurationError(f"k must be a positive integer or 'auto', got {self.k!r}") from None
        if isinstance(k, (int, np.integer)) and not isinstance(k, bool):
            if k < 1:
                raise ConfigurationError(f"k must be positive, got {k}")
            k = int(k)
        object.__setattr__(self, "k", k)
        if self.method is Method.KNN_KDE:
            if not self.tau > 0:
                raise ConfigurationError("tau must be positive")
            if not self.bandwidth_h >= 0:
                raise ConfigurationError("bandwidth_h must be non-negative")

    @property
    def label(self) -> str:
        return self.method.value

    def to_dict(self) -> dict:
        return {"method": self.method.value, "k": self.k, "tau": self.tau, "bandwidth_h": self.bandwidth_h}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed covariate/response pairs plus units whose response is missing.

    Arrays are stored read-only.  ``observed_rows`` and ``missing_rows`` record
    each unit's position in the source table so that imputed output can be
    written back in the original row order.
    """

    x_obs: np.ndarray
    y_obs: np.ndarray
    x_miss: np.ndarray
    truth: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()
    response_name: str = "y"
    truth_name: str | None = None
    observed_rows: np.ndarray | None = None
    missing_rows: np.ndarray | None = None

    def __post_init__(self) -> None:
        x_obs = _as_matrix(self.x_obs)
        x_miss = _as_matrix(self.x_miss)
        if x_obs.shape[1] != x_miss.shape[1]:
            raise ConsistencyError(
                f"observed covariates have dimension {x_obs.shape[1]}, missing ones {x_miss.shape[1]}"
            )
        y_obs = np.array(self.y_obs, dtype=float).reshape(-1)
        if y_obs.shape[0] != x_obs.shape[0]:
            raise ConsistencyError("x_obs and y_obs lengths differ")
        truth = self.truth
        if truth is not None:
            truth = np.array(truth, dtype=float).reshape(-1)
            if truth.shape[0] != x_miss.shape[0]:
                raise ConsistencyError("truth length differs from the number of missing units")
            present = ~np.isnan(truth)
            if not np.all(np.isfinite(truth[present])):
                raise ConsistencyError("truth values must be finite")
        n, m = x_obs.shape[0], x_miss.shape[0]
        obs_rows = np.arange(n) if self.observed_rows is None else np.array(self.observed_rows, dtype=np.int64)
        miss_rows = np.arange(n, n + m) if self.missing_rows is None else np.array(self.missing_rows, dtype=np.int64)
        if obs_rows.shape != (n,) or miss_rows.shape != (m,):
            raise ConsistencyError("row index arrays do not match the unit counts")
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(x_obs.shape[1]))
        if len(names) != x_obs.shape[1]:
            raise ConsistencyError("covariate_names length differs from the covariate dimension")
        for arr in (x_obs, y_obs, x_miss, truth, obs_rows, miss_rows):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "x_obs", x_obs)
        object.__setattr__(self, "y_obs", y_obs)
        object.__setattr__(self, "x_miss", x_miss)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "observed_rows", obs_rows)
        object.__setattr__(self, "missing_rows", miss_rows)

    @property
    def n(self) -> int:
        return self.x_obs.shape[0]

    @property
    def m(self) -> int:
        return self.x_miss.shape[0]

    @property
    def dim_p(self) -> int:
        return self.x_obs.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.truth is not None and not np.any(np.isnan(self.truth))

    def require_observed(self) -> None:
        if self.n == 0:
            raise EmptyObservedError("dataset has no observed responses; nothing to impute from")

    def equals(self, other: Dataset) -> bool:
        """Bit-exact comparison of payload, names and row layout."""

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            same(self.x_obs, other.x_obs)
            and same(self.y_obs, other.y_obs)
            and same(self.x_miss, other.x_miss)
            and same(self.truth, other.truth)
            and same(self.observed_rows, other.observed_rows)
            and same(self.missing_rows, other.missing_rows)
            and self.covariate_names == other.covariate_names
            and self.response_name == other.response_name
            and self.truth_name == other.truth_name
        )


def _as_matrix(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ConsistencyError("covariates must be a 2-D array of shape (units, dim_p)")
    return np.ascontiguousarray(arr)


@dataclass(eq=False)
class ImputationRun:
    """Per-unit imputations for one replicate."""

    method_config: MethodConfig
    values: np.ndarray
    replicate_id: int = 0
    master_seed: int = 0
    k: int | None = None
    selection: object | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    def same_values(self, other: ImputationRun) -> bool:
        return self.values.tobytes() == other.values.tobytes()


def format_number(value: float) -> str:
    """Shortest decimal string that parses back to the same double."""
    if math.isnan(value):
        return ""
    return repr(float(value))


def _parse_cell(cell: str, column: str, row: int, *, allow_missing: bool) -> float:
    text = cell.strip()
    if text.lower() in _MISSING_MARKERS:
        if allow_missing:
            return math.nan
        raise ParseError(f"row {row}: empty or NaN value in column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}: non-numeric value {cell!r} in column {column!r}") from None
    if not allow_missing and not math.isfinite(value):
        raise ParseError(f"row {row}: non-finite value {cell!r} in column {column!r}")
    return value


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: file is empty, expected a header row") from None
        rows = [row for row in reader if row]
    header = [h.strip() for h in header]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} cells, found {len(row)}")
    return header, rows


def load_dataset(
    path: str | Path,
    covariate_columns: Sequence[str] | None,
    response_column: str,
    truth_column: str | None = None,
) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    Rows whose response cell is empty or ``NaN`` (any case) become missing
    units; the others become observed pairs.  When ``covariate_columns`` is
    ``None`` every column other than the response, the truth column and the
    imputation flag is used.  Row indices in error messages count data rows
    from zero.
    """
    header, rows = read_table(path)
    if response_column not in header:
        raise SchemaError(f"response column {response_column!r} not found in {path}")
    if truth_column is not None and truth_column not in header:
        raise SchemaError(f"truth column {truth_column!r} not found in {path}")
    if covariate_columns is None:
        skip = {response_column, truth_column, FLAG_COLUMN}
        covariate_columns = [h for h in header if h not in skip]
    covariate_columns = list(covariate_columns)
    if not covariate_columns:
        raise SchemaError("no covariate columns")
    for name in covariate_columns:
        if name not in header:
            raise SchemaError(f"covariate column {name!r} not found in {path}")
    cov_idx = [header.index(c) for c in covariate_columns]
    resp_idx = header.index(response_column)
    truth_idx = header.index(truth_column) if truth_column is not None else None

    x = np.empty((len(rows), len(cov_idx)))
    y = np.empty(len(rows))
    t = np.full(len(rows), np.nan)
    for r, row in enumerate(rows):
        for j, ci in enumerate(cov_idx):
            x[r, j] = _parse_cell(row[ci], header[ci], r, allow_missing=False)
        y[r] = _parse_cell(row[resp_idx], response_column, r, allow_missing=True)
        if truth_idx is not None:
            t[r] = _parse_cell(row[truth_idx], truth_column, r, allow_missing=True)
    missing = np.isnan(y)
    if not np.any(~missing):
        raise EmptyObservedError(f"{path}: no rows with an observed response")
    obs_rows = np.flatnonzero(~missing)
    miss_rows = np.flatnonzero(missing)
    return Dataset(
        x_obs=x[obs_rows],
        y_obs=y[obs_rows],
        x_miss=x[miss_rows],
        truth=t[miss_rows] if truth_idx is not None else None,
        covariate_names=tuple(covariate_columns),
        response_name=response_column,
        truth_name=truth_column,
        observed_rows=obs_rows,
        missing_rows=miss_rows,
    )


def _table_rows(dataset: Dataset, response: np.ndarray, flags: np.ndarray | None) -> tuple[list[str], list[list[str]]]:
    header = list(dataset.covariate_names) + [dataset.response_name]
    if dataset.truth_name is not None:
        header.append(dataset.truth_name)
    if flags is not None:
        header.append(FLAG_COLUMN)
    total = dataset.n + dataset.m
    x = np.empty((total, dataset.dim_p))
    x[dataset.observed_rows] = dataset.x_obs
    x[dataset.missing_rows] = dataset.x_miss
    truth = np.full(total, np.nan)
    if dataset.truth is not None:
        truth[dataset.missing_rows] = dataset.truth
    out = []
    for r in range(total):
        row = [format_number(v) for v in x[r]]
        row.append(format_number(response[r]))
        if dataset.truth_name is not None:
            row.append(format_number(truth[r]))
        if flags is not None:
            row.append("true" if flags[r] else "false")
        out.append(row)
    return header, out


def _write_table(path: str | Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset with empty response cells for its missing units."""
    response = np.full(dataset.n + dataset.m, np.nan)
    response[dataset.observed_rows] = dataset.y_obs
    _write_table(path, *_table_rows(dataset, response, None))


def save_imputed(dataset: Dataset, imputations: ImputationRun | np.ndarray, path: str | Path) -> None:
    """Write ``dataset`` with every missing response replaced by its imputation.

    The output keeps the source row order and appends a ``__imputed__``
    column of ``true``/``false`` flags.
    """
    values = imputations.values if isinstance(imputations, ImputationRun) else np.asarray(imputations, float)
    if values.shape != (dataset.m,):
        raise ConsistencyError(f"{values.shape[0] if values.ndim else 0} imputations for {dataset.m} missing units")
    total = dataset.n + dataset.m
    response = np.empty(total)
    response[dataset.observed_rows] = dataset.y_obs
    response[dataset.missing_rows] = values
    flags = np.zeros(total, dtype=bool)
    flags[dataset.missing_rows] = True
    _write_table(path, *_table_rows(dataset, response, flags))
