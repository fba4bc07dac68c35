"""Heavy-tailed hourly pageview time series: ingestion, robust AR
fitting, shared-support sparse autoregression and benchmark tooling."""

__version__ = "0.1.0"

from .ingest import (
    IngestManifest,
    ingest_month,
    read_month,
    write_month,
    write_month_parquet,
)
from .losses import LossSpec, eval_loss, irls_weight, total_objective
from .seriesstore import (
    CategoryPartition,
    MonthTable,
    PageKey,
    TimeSeries,
    categorize,
    slice_days,
    total_views,
)
from .solvers import (
    DesignPair,
    FitResult,
    IrlsOptions,
    build_design,
    fit_huber_oracle,
    fit_irls,
    fit_l1_lp,
    fit_model,
    fit_quantile_lp,
    fit_wls,
    predict_one_step,
    rolling_forecast,
)
from .sparsear import (
    GramPair,
    SparseArProblem,
    SparseArResult,
    accumulate_gram,
    exhaustive_oracle,
    greedy_support,
    nnls_on_support,
    objective_value,
    seasonality_report,
    solve_branch_and_bound,
)

__all__ = [
    "__version__",
    "IngestManifest", "ingest_month", "read_month", "write_month",
    "write_month_parquet",
    "LossSpec", "eval_loss", "irls_weight", "total_objective",
    "PageKey", "TimeSeries", "MonthTable", "CategoryPartition",
    "categorize", "slice_days", "total_views",
    "DesignPair", "FitResult", "IrlsOptions", "build_design",
    "fit_wls", "fit_irls", "fit_quantile_lp", "fit_l1_lp",
    "fit_huber_oracle", "fit_model", "predict_one_step", "rolling_forecast",
    "GramPair", "SparseArProblem", "SparseArResult", "accumulate_gram",
    "objective_value", "nnls_on_support", "greedy_support",
    "solve_branch_and_bound", "exhaustive_oracle", "seasonality_report",
]
