"""Missing-response imputation by sampling from k-nearest-neighbour conditionals.

The package pairs the kNN sampler with its usual competitors (kNN mean,
linear regression, kNN x KDE), leave-one-out choice of ``k``, prediction
intervals, multiple imputation, energy-distance and MMD evaluation, the two
synthetic benchmark setups and an empirical convergence check.
"""

from .benchmark import BenchmarkConfig, BenchmarkReport, export_report, run_benchmark
from .core import (
    Dataset,
    ImputationRun,
    KnnSamplerError,
    Method,
    MethodConfig,
    RngStream,
    load_dataset,
    save_dataset,
    save_imputed,
)
from .datagen import MaskSpec, Mechanism, Setup, make_dataset
from .embedding import Kernel, WeightedSample, knn_embedding_error, mmd_squared
from .evaluation import EvalReport, energy_distance, evaluate, permutation_test, rmse
from .imputers import EmpiricalConditional, impute_all, knn_conditional
from .multiple import PooledEstimate, impute_multiple, pool_mean, rubin_pool
from .neighbors import NeighborIndex, build_index, query_knn
from .selection import LoocvReport, loocv_select_k, select_k
from .theory import ConvergenceReport, run_convergence_experiment
from .uncertainty import PredictionInterval, conditional_probability, conditional_std, prediction_interval

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig", "BenchmarkReport", "ConvergenceReport", "Dataset", "EmpiricalConditional",
    "EvalReport", "ImputationRun", "Kernel", "KnnSamplerError", "LoocvReport", "MaskSpec", "Mechanism",
    "Method", "MethodConfig", "NeighborIndex", "PooledEstimate", "PredictionInterval", "RngStream",
    "Setup", "WeightedSample", "build_index", "conditional_probability", "conditional_std",
    "energy_distance", "evaluate", "export_report", "impute_all", "impute_multiple", "knn_conditional",
    "knn_embedding_error", "load_dataset", "loocv_select_k", "make_dataset", "mmd_squared", "permutation_test",
    "pool_mean", "prediction_interval", "query_knn", "rmse", "rubin_pool", "run_benchmark",
    "run_convergence_experiment", "save_dataset", "save_imputed", "select_k",
]
