"""Benchmark systems, experiment plans, the forecasting grid and result emission."""

from .config import (
    FILTER_METHODS,
    METHODS,
    TABLE1_REPETITIONS,
    ExperimentConfig,
    ExperimentPlan,
    ParamConvergencePlan,
    cell_seed,
    config_from_dict,
    load_config,
)
from .output import aggregate, emit_results, read_results, write_aggregate, write_param_convergence, write_results
from .runner import (
    ConvergenceSummary,
    ParamConvergenceRecord,
    RmseRecord,
    TestBlock,
    compute_rmse,
    filter_cell,
    make_history,
    make_test_block,
    param_convergence_experiment,
    perturbed_prior,
    plan_cells,
    run_cell,
    run_experiment,
    run_filter_arm,
    run_svm_arm,
    sample_test_indices,
    summarize_convergence,
    svm_cell,
    svm_predictions,
)
from .systems import ALL_KNOWN, ALL_UNKNOWN, SYSTEM_IDS, SystemConfig, build_system, builtin_systems

__all__ = [
    "ALL_KNOWN",
    "ALL_UNKNOWN",
    "FILTER_METHODS",
    "METHODS",
    "SYSTEM_IDS",
    "TABLE1_REPETITIONS",
    "ConvergenceSummary",
    "ExperimentConfig",
    "ExperimentPlan",
    "ParamConvergencePlan",
    "ParamConvergenceRecord",
    "RmseRecord",
    "SystemConfig",
    "TestBlock",
    "aggregate",
    "build_system",
    "builtin_systems",
    "cell_seed",
    "compute_rmse",
    "config_from_dict",
    "emit_results",
    "filter_cell",
    "load_config",
    "make_history",
    "make_test_block",
    "param_convergence_experiment",
    "perturbed_prior",
    "plan_cells",
    "read_results",
    "run_cell",
    "run_experiment",
    "run_filter_arm",
    "run_svm_arm",
    "sample_test_indices",
    "summarize_convergence",
    "svm_cell",
    "svm_predictions",
    "write_aggregate",
    "write_param_convergence",
    "write_results",
]
