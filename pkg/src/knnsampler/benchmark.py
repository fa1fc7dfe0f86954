"""Replicated comparison of imputation methods on the synthetic setups.

Every replicate draws a fresh dataset, masks it, imputes it with each method
and scores the result against the held-out truth.  Cells are keyed by
``(setup, n, method)`` and aggregate all replicates.

Report schema (version 1)::

    {"schema_version": 1,
     "config": {...},
     "absent_methods": {"random_forest": "absent by design"},
     "cells": {"<setup>|<n>|<method>": {
         "setup", "n", "method", "k": [per-replicate k or null],
         "metrics": {"<name>": {"mean", "std", "values"}},
         "errors": [str, ...]}}}

Metric names are ``energy``, ``p_value``, ``rmse`` and, for ``knn_sampler``
only, ``coverage_0.80`` style entries.  ``std`` uses denominator
``replicates - 1`` and is ``null`` for a single replicate.  Wall-clock timings
are kept on the report object but left out of exports unless asked for, so
exported bytes do not depend on scheduling.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigurationError, Dataset, Method, MethodConfig, RngStream
from .datagen import MaskSpec, Setup, make_dataset
from .evaluation import DEFAULT_PERMUTATIONS, evaluate
from .imputers import impute_all, unit_conditionals
from .neighbors import build_index
from .uncertainty import coverage_probability, prediction_interval

REPORT_SCHEMA_VERSION = 1
BENCHMARK_STREAM = 2**63 + 2
DEFAULT_N_GRID = (2800, 4800, 6800, 8800, 10800)
COVERAGE_LEVELS = (0.80, 0.90, 0.95)
ABSENT_METHODS = {"random_forest": "absent by design"}
_SETUP_CODES = {Setup.LINEAR_CHISQ: 1, Setup.NOISY_RING: 2}


def default_methods() -> tuple[MethodConfig, ...]:
    return (
        MethodConfig(Method.LINEAR, k=None),
        MethodConfig(Method.KNN_IMPUTER, k=5),
        MethodConfig(Method.KNN_KDE, k=None, tau=50.0, bandwidth_h=0.03),
        MethodConfig(Method.KNN_SAMPLER, k="auto"),
    )


def coverage_metric(level: float) -> str:
    return f"coverage_{level:.2f}"


@dataclass(frozen=True)
class BenchmarkConfig:
    setup: Setup | str = Setup.LINEAR_CHISQ
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    m: int = 200
    mechanism: MaskSpec | str = "mar_window"
    methods: tuple[MethodConfig, ...] = field(default_factory=default_methods)
    replicates: int = 10
    n_permutations: int = DEFAULT_PERMUTATIONS
    master_seed: int = 0
    coverage_levels: tuple[float, ...] = COVERAGE_LEVELS

    def __post_init__(self) -> None:
        object.__setattr__(self, "setup", Setup.parse(self.setup))
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(n < 1 for n in grid):
            raise ConfigurationError("n_grid must hold positive sizes")
        object.__setattr__(self, "n_grid", grid)
        if self.m < 1:
            raise ConfigurationError("m must be positive")
        mech = self.mechanism
        spec = MaskSpec(mech.mechanism, self.m, mech.window) if isinstance(mech, MaskSpec) else MaskSpec(mech, self.m)
        object.__setattr__(self, "mechanism", spec)
        methods = tuple(c if isinstance(c, MethodConfig) else MethodConfig(**c) for c in self.methods)
        if not methods:
            raise ConfigurationError("at least one method is required")
        labels = [c.label for c in methods]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"duplicate methods in {labels}")
        object.__setattr__(self, "methods", methods)
        if self.replicates < 1:
            raise ConfigurationError("replicates must be positive")
        if self.n_permutations < 1:
            raise ConfigurationError("n_permutations must be positive")
        levels = tuple(float(a) for a in self.coverage_levels)
        if any(not 0 < a < 1 for a in levels):
            raise ConfigurationError("coverage levels must lie in (0, 1)")
        object.__setattr__(self, "coverage_levels", levels)

    def to_dict(self) -> dict:
        return {
            "setup": self.setup.value,
            "n_grid": list(self.n_grid),
            "m": self.m,
            "mechanism": self.mechanism.to_dict(),
            "methods": [c.to_dict() for c in self.methods],
            "replicates": self.replicates,
            "n_permutations": self.n_permutations,
            "master_seed": self.master_seed,
            "coverage_levels": list(self.coverage_levels),
        }


@dataclass
class MetricSummary:
    mean: float | None
    std: float | None
    values: list[float]

    @classmethod
    def of(cls, values: list[float], complete: bool) -> MetricSummary:
        if not complete or not values:
            return cls(None, None, values)
        arr = np.asarray(values, dtype=float)
        std = float(np.std(arr, ddof=1)) if arr.shape[0] > 1 else None
        return cls(float(np.mean(arr)), std, values)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "values": list(self.values)}


@dataclass
class CellSummary:
    setup: str
    n: int
    method: str
    k: list[int | None]
    metrics: dict[str, MetricSummary]
    errors: list[str] = field(default_factory=list)

    @property
    def key(self) -> str:
        return f"{self.setup}|{self.n}|{self.method}"

    def mean(self, metric: str) -> float | None:
        return self.metrics[metric].mean

    def to_dict(self) -> dict:
        return {
            "setup": self.setup,
            "n": self.n,
            "method": self.method,
            "k": list(self.k),
            "metrics": {name: s.to_dict() for name, s in sorted(self.metrics.items())},
            "errors": list(self.errors),
        }

    @classmethod
    def from_dict(cls, data: dict) -> CellSummary:
        metrics = {name: MetricSummary(**s) for name, s in data["metrics"].items()}
        return cls(data["setup"], data["n"], data["method"], list(data["k"]), metrics, list(data["errors"]))


@dataclass
class BenchmarkReport:
    config: dict
    cells: dict[str, CellSummary]
    absent_methods: dict = field(default_factory=lambda: dict(ABSENT_METHODS))
    schema_version: int = REPORT_SCHEMA_VERSION
    # seconds per cell key; never part of equality or default exports
    wall_clock: dict[str, float] = field(default_factory=dict, compare=False)

    def cell(self, n: int, method: str | Method, setup: str | Setup | None = None) -> CellSummary:
        setup = Setup.parse(setup or self.config["setup"]).value
        return self.cells[f"{setup}|{int(n)}|{Method.parse(method).value}"]

    def to_dict(self, *, include_timing: bool = False) -> dict:
        out = {
            "schema_version": self.schema_version,
            "config": self.config,
            "absent_methods": dict(self.absent_methods),
            "cells": {key: c.to_dict() for key, c in self.cells.items()},
        }
        if include_timing:
            out["wall_clock"] = dict(self.wall_clock)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> BenchmarkReport:
        return cls(
            config=data["config"],
            cells={key: CellSummary.from_dict(c) for key, c in data["cells"].items()},
            absent_methods=dict(data.get("absent_methods", ABSENT_METHODS)),
            schema_version=data.get("schema_version", REPORT_SCHEMA_VERSION),
            wall_clock=dict(data.get("wall_clock", {})),
        )

    def to_json(self, *, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing=include_timing), indent=2, sort_keys=True)

    def csv_rows(self) -> list[list]:
        rows = []
        for c in self.cells.values():
            for name, s in sorted(c.metrics.items()):
                rows.append([c.setup, c.n, c.method, name, _cell_text(s.mean), _cell_text(s.std), len(s.values)])
        return rows


CSV_HEADER = ["setup", "n", "method", "metric", "mean", "std", "runs"]


def _cell_text(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def export_report(report: BenchmarkReport, path: str | Path, format: str = "json", *, include_timing: bool = False) -> None:
    """Write ``report`` as JSON (cells keyed by ``setup|n|method``) or long-format CSV."""
    fmt = format.lower()
    if fmt == "json":
        Path(path).write_text(report.to_json(include_timing=include_timing) + "\n", encoding="utf-8")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            writer.writerows(report.csv_rows())
    else:
        raise ConfigurationError(f"unknown report format {format!r}; use json or csv")


def load_report(path: str | Path) -> BenchmarkReport:
    return BenchmarkReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class _Outcome:
    k: int | None = None
    metrics: dict[str, float] = field(default_factory=dict)
    error: str | None = None
    seconds: float = 0.0


def _score(dataset: Dataset, config: MethodConfig, cfg: BenchmarkConfig, stream: RngStream, index) -> _Outcome:
    impute_seed = stream.derive(0).seed64()
    run = impute_all(dataset, config, impute_seed, 0, workers=1, index=index)
    report = evaluate(dataset.x_miss, dataset.truth, run.values, cfg.n_permutations, stream.derive(1).seed64())
    metrics = {"energy": report.energy, "p_value": report.p_value, "rmse": report.rmse}
    if config.method is Method.KNN_SAMPLER:
        conds = unit_conditionals(dataset, run.k, impute_seed, 0, index)
        for level in cfg.coverage_levels:
            intervals = [prediction_interval(c, 1.0 - level) for c in conds]
            metrics[coverage_metric(level)] = coverage_probability(intervals, dataset.truth)
    return _Outcome(k=run.k, metrics=metrics)


def _replicate(cfg: BenchmarkConfig, n: int, r: int) -> list[_Outcome]:
    base = RngStream(cfg.master_seed, BENCHMARK_STREAM).derive(_SETUP_CODES[cfg.setup], n, r)
    dataset = make_dataset(cfg.setup, n, cfg.mechanism, base.derive(0))
    index = build_index(dataset.x_obs)
    outcomes = []
    for j, config in enumerate(cfg.methods):
        start = time.perf_counter()
        try:
            out = _score(dataset, config, cfg, base.derive(1, j), index)
        except Exception as exc:  # recorded per cell, other cells carry on
            out = _Outcome(error=f"{type(exc).__name__}: {exc}")
        out.seconds = time.perf_counter() - start
        outcomes.append(out)
    return outcomes


def run_benchmark(config: BenchmarkConfig, *, workers: int = 1) -> BenchmarkReport:
    """Run every ``(n, replicate)`` job and aggregate per ``(setup, n, method)``.

    Each job has its own seed derived from ``(master_seed, setup, n,
    replicate)``, so the report does not depend on ``workers`` or job order.
    """
    jobs = [(n, r) for n in config.n_grid for r in range(config.replicates)]
    if workers <= 1:
        results = [_replicate(config, n, r) for n, r in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _replicate(config, *job), jobs))
    by_job = dict(zip(jobs, results))

    cells: dict[str, CellSummary] = {}
    wall_clock: dict[str, float] = {}
    for n in config.n_grid:
        for j, mc in enumerate(config.methods):
            outs = [by_job[(n, r)][j] for r in range(config.replicates)]
            errors = [f"replicate {r}: {o.error}" for r, o in enumerate(outs) if o.error]
            names = sorted({name for o in outs for name in o.metrics})
            complete = not errors
            metrics = {name: MetricSummary.of([o.metrics[name] for o in outs if name in o.metrics], complete) for name in names}
            cell = CellSummary(config.setup.value, n, mc.label, [o.k for o in outs], metrics, errors)
            cells[cell.key] = cell
            wall_clock[cell.key] = float(sum(o.seconds for o in outs))
    return BenchmarkReport(config=config.to_dict(), cells=cells, wall_clock=wall_clock)
