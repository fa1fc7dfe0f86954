"""Command-line entry point: generate, impute, evaluate, benchmark, theory-check.

Exit codes are 0 on success, 1 on usage errors and 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkConfig, export_report, run_benchmark
from .core import (
    FLAG_COLUMN,
    ConfigurationError,
    ConsistencyError,
    KnnSamplerError,
    Method,
    MethodConfig,
    ParseError,
    RngStream,
    SchemaError,
    format_number,
    load_dataset,
    read_table,
    save_dataset,
    save_imputed,
)
from .datagen import MaskSpec, Setup, make_dataset
from .evaluation import DEFAULT_PERMUTATIONS, evaluate
from .imputers import default_workers, unit_conditionals
from .multiple import impute_multiple, pool_mean
from .theory import run_convergence_experiment
from .uncertainty import conditional_std, prediction_interval

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _method(text: str) -> Method:
    try:
        return Method.parse(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _k(text: str) -> int | str:
    if text == "auto":
        return text
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"k must be a positive integer or 'auto', got {text!r}") from None
    if k < 1:
        raise argparse.ArgumentTypeError(f"k must be positive, got {k}")
    return k


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be a non-negative integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _grid(text: str) -> list[int]:
    sizes = [_positive_int(part.strip()) for part in text.split(",") if part.strip()]
    if not sizes:
        raise argparse.ArgumentTypeError("empty size grid")
    return sizes


def _setup(text: str) -> Setup:
    try:
        return Setup.parse(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _names(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads (default $KNNSAMPLER_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knnsampler", description="kNN conditional-sampling imputation toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset with masked responses")
    g.add_argument("--setup", type=_setup, default=Setup.LINEAR_CHISQ, help="linear or ring")
    g.add_argument("--n", type=_positive_int, default=2800, help="observed units")
    g.add_argument("--m", type=int, default=200, help="missing units")
    g.add_argument("--mechanism", default="mar_window", choices=["mar", "mar_window", "mcar"])
    g.add_argument("--output", required=True)
    _add_common(g)

    i = sub.add_parser("impute", help="impute the missing responses of a dataset file")
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--method", type=_method, required=True, help="knn-sampler, knn-imputer, linear or knn-kde")
    i.add_argument("--k", type=_k, default="auto", help="integer or 'auto' (leave-one-out selection)")
    i.add_argument("--tau", type=float, default=50.0, help="kNN x KDE inverse temperature")
    i.add_argument("--bandwidth", type=float, default=0.03, help="kNN x KDE bandwidth h")
    i.add_argument("--replicates", type=_positive_int, default=1, help="B runs written to suffixed files")
    i.add_argument("--response", default="y")
    i.add_argument("--covariates", type=_names, default=None, help="comma-separated names (default: all others)")
    i.add_argument("--truth-column", default=None, help="default: '<response>_true' when present")
    i.add_argument("--intervals", default=None, help="also write kNN prediction intervals to this file")
    i.add_argument("--alpha", type=float, default=0.05, help="miscoverage level for --intervals")
    _add_common(i)

    e = sub.add_parser("evaluate", help="score imputations against held-out truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--imputed", required=True)
    e.add_argument("--response", default="y")
    e.add_argument("--covariates", type=_names, default=None)
    e.add_argument("--truth-column", default=None, help="default: '<response>_true' when present, else the response")
    e.add_argument("--permutations", type=_positive_int, default=DEFAULT_PERMUTATIONS)
    e.add_argument("--output", default=None, help="write the report as JSON")
    _add_common(e)

    b = sub.add_parser("benchmark", help="replicated method comparison on a synthetic setup")
    b.add_argument("--setup", type=_setup, default=Setup.LINEAR_CHISQ)
    b.add_argument("--n", type=_grid, default=[2800, 4800, 6800, 8800, 10800], help="comma-separated sizes")
    b.add_argument("--m", type=_positive_int, default=200)
    b.add_argument("--mechanism", default="mar_window", choices=["mar", "mar_window", "mcar"])
    b.add_argument("--methods", type=_names, default=None, help="comma-separated subset of the four methods")
    b.add_argument("--k-imputer", type=_positive_int, default=5, help="k for knn-imputer")
    b.add_argument("--tau", type=float, default=50.0)
    b.add_argument("--bandwidth", type=float, default=0.03)
    b.add_argument("--replicates", type=_positive_int, default=10)
    b.add_argument("--permutations", type=_positive_int, default=DEFAULT_PERMUTATIONS)
    b.add_argument("--output", default="benchmark.json")
    b.add_argument("--format", choices=["json", "csv"], default=None, help="default: from the output suffix")
    _add_common(b)

    t = sub.add_parser("theory-check", help="MMD convergence of the kNN conditional")
    t.add_argument("--setup", type=_setup, default=Setup.LINEAR_CHISQ)
    t.add_argument("--x", type=float, default=0.0, help="query covariate")
    t.add_argument("--n", type=_grid, default=[1000, 4000, 16000, 64000])
    t.add_argument("--replicates", type=_positive_int, default=10)
    t.add_argument("--c", type=float, default=1.0, help="k = round(c * n^(2/(2+d)))")
    t.add_argument("--d", type=float, default=1.0, help="intrinsic dimension")
    t.add_argument("--fixed-k", type=_positive_int, default=None, help="use this k for every n instead")
    t.add_argument("--reference-size", type=_positive_int, default=100_000)
    t.add_argument("--output", default="theory.json")
    _add_common(t)
    return parser


def _workers(args) -> int:
    return args.threads if args.threads is not None else default_workers()


def _suffixed(path: Path, b: int) -> Path:
    return path.with_name(f"{path.stem}_{b}{path.suffix}")


def cmd_generate(args) -> int:
    if args.m < 0:
        raise UsageError("--m must be non-negative")
    spec = MaskSpec(args.mechanism, args.m)
    dataset = make_dataset(args.setup, args.n, spec, RngStream(args.seed))
    save_dataset(dataset, args.output)
    print(f"wrote {args.output}: n={dataset.n} observed, m={dataset.m} missing ({args.setup.value})")
    return EXIT_OK


def _truth_column(header: list[str], response: str, requested: str | None) -> str | None:
    if requested is not None:
        return requested
    guess = f"{response}_true"
    return guess if guess in header else None


def cmd_impute(args) -> int:
    header, _ = read_table(args.input)
    truth = _truth_column(header, args.response, args.truth_column)
    dataset = load_dataset(args.input, args.covariates, args.response, truth)
    try:
        config = MethodConfig(args.method, args.k if args.method is not Method.LINEAR else None, args.tau, args.bandwidth)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    if config.method is Method.KNN_KDE and args.k == "auto":
        config = MethodConfig(Method.KNN_KDE, None, args.tau, args.bandwidth)
    runs = impute_multiple(dataset, config, args.replicates, args.seed, workers=_workers(args))

    selection = runs[0].selection
    if selection is not None:
        pairs = ", ".join(f"k={k}: {format_number(e)}" for k, e in zip(selection.k_grid, selection.loo_mse))
        print(f"LOOCV mean squared error: {pairs}")
    if runs[0].k is not None:
        print(f"resolved k = {runs[0].k}")

    out = Path(args.output)
    if args.replicates == 1:
        save_imputed(dataset, runs[0], out)
        print(f"wrote {out}")
    else:
        for b, run in enumerate(runs):
            save_imputed(dataset, run, _suffixed(out, b))
        print(f"wrote {args.replicates} files {_suffixed(out, 0).name} .. {_suffixed(out, args.replicates - 1).name}")
        if dataset.m:
            pooled = pool_mean(dataset, runs)
            print(f"pooled mean {format_number(pooled.point)} (std error {format_number(pooled.std_error)})")

    if args.intervals:
        if config.method is Method.LINEAR:
            raise UsageError("--intervals needs a kNN method")
        conds = unit_conditionals(dataset, runs[0].k, args.seed, 0) if dataset.m else []
        with open(args.intervals, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "lower", "upper", "nominal", "conditional_std"])
            for row, cond in zip(dataset.missing_rows, conds):
                iv = prediction_interval(cond, args.alpha)
                writer.writerow([int(row), format_number(iv.lower), format_number(iv.upper), format_number(iv.nominal),
                                 format_number(conditional_std(cond))])
        print(f"wrote {args.intervals}")
    return EXIT_OK


def _column(header: list[str], rows: list[list[str]], name: str, path: str, selected: np.ndarray) -> np.ndarray:
    if name not in header:
        raise SchemaError(f"column {name!r} not found in {path}")
    j = header.index(name)
    out = np.empty(selected.shape[0])
    for t, r in enumerate(selected):
        try:
            out[t] = float(rows[r][j])
        except ValueError:
            raise ParseError(f"{path}: row {r}, column {name!r}: not a number: {rows[r][j]!r}") from None
    return out


def _default_truth(header: list[str], rows: list[list[str]], response: str, selected: np.ndarray) -> str:
    """The response column, or ``<response>_true`` when the response is blank on evaluated rows."""
    fallback = f"{response}_true"
    if response in header and fallback in header:
        j = header.index(response)
        if any(rows[r][j].strip().lower() in ("", "nan") for r in selected):
            return fallback
    return response if response in header or fallback not in header else fallback


def cmd_evaluate(args) -> int:
    t_header, t_rows = read_table(args.truth)
    i_header, i_rows = read_table(args.imputed)
    if len(t_rows) != len(i_rows):
        raise ConsistencyError(f"{args.truth} has {len(t_rows)} rows but {args.imputed} has {len(i_rows)}")
    if FLAG_COLUMN in i_header:
        f = i_header.index(FLAG_COLUMN)
        selected = np.array([r for r, row in enumerate(i_rows) if row[f].strip().lower() == "true"], dtype=np.int64)
    else:
        selected = np.arange(len(i_rows))
    truth_name = args.truth_column or _default_truth(t_header, t_rows, args.response, selected)
    skip = {args.response, truth_name, f"{args.response}_true", FLAG_COLUMN}
    names = args.covariates or [c for c in i_header if c not in skip]
    if not names:
        raise SchemaError(f"no covariate columns in {args.imputed}")
    x = np.column_stack([_column(i_header, i_rows, c, args.imputed, selected) for c in names])
    truth = _column(t_header, t_rows, truth_name, args.truth, selected)
    imputed = _column(i_header, i_rows, args.response, args.imputed, selected)
    report = evaluate(x, truth, imputed, args.permutations, args.seed)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def _benchmark_methods(args) -> list[MethodConfig]:
    configs = {
        Method.LINEAR: MethodConfig(Method.LINEAR, None),
        Method.KNN_IMPUTER: MethodConfig(Method.KNN_IMPUTER, args.k_imputer),
        Method.KNN_KDE: MethodConfig(Method.KNN_KDE, None, args.tau, args.bandwidth),
        Method.KNN_SAMPLER: MethodConfig(Method.KNN_SAMPLER, "auto"),
    }
    if args.methods is None:
        return list(configs.values())
    try:
        return [configs[Method.parse(name)] for name in args.methods]
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def cmd_benchmark(args) -> int:
    try:
        config = BenchmarkConfig(
            setup=args.setup,
            n_grid=tuple(args.n),
            m=args.m,
            mechanism=args.mechanism,
            methods=tuple(_benchmark_methods(args)),
            replicates=args.replicates,
            n_permutations=args.permutations,
            master_seed=args.seed,
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    report = run_benchmark(config, workers=_workers(args))
    fmt = args.format or ("csv" if args.output.lower().endswith(".csv") else "json")
    export_report(report, args.output, fmt)
    print(f"{'n':>6} {'method':<12} {'energy':>10} {'p_value':>8} {'rmse':>8}")
    for cell in report.cells.values():
        if cell.errors:
            print(f"{cell.n:>6} {cell.method:<12} failed: {cell.errors[0]}")
            continue
        e, p, r = (cell.mean(name) for name in ("energy", "p_value", "rmse"))
        print(f"{cell.n:>6} {cell.method:<12} {e:>10.5f} {p:>8.4f} {r:>8.4f}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_theory_check(args) -> int:
    try:
        report = run_convergence_experiment(
            args.setup,
            args.x,
            args.n,
            args.replicates,
            c=args.c,
            d=args.d,
            reference_size=args.reference_size,
            master_seed=args.seed,
            fixed_k=args.fixed_k,
            workers=_workers(args),
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    report.export(args.output)
    for n, k, mean in zip(report.n_grid, report.k_values, report.mmd2_mean):
        print(f"n={n:>7} k={k:>6} mean MMD^2={mean:.6g}")
    print(f"fitted log-log slope {report.fitted_slope:.4f}")
    print(f"wrote {args.output}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "impute": cmd_impute,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "theory-check": cmd_theory_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"knnsampler {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KnnSamplerError, OSError, ValueError) as exc:
        print(f"knnsampler {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
