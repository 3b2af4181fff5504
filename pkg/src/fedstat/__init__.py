"""Locally updated SGD simulation with online statistical inference."""

from .critvals import CriticalValueTable, default_table, lookup, simulate_table
from .engine import DivergenceError, SyncPath, average_estimate, run
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    build_federation,
    convergence_curve,
    load_config,
    partial_sum_process,
    run_experiment,
)
from .models import ClientModel, Federation, federation_of, true_sandwich
from .plugin import PluginObserver, PluginState, SingularHessian
from .rscale import RScaleObserver, RScaleState, beta_for_schedule
from .schedules import (
    CommunicationSchedule,
    ExplicitSchedule,
    ScheduleDiagnostics,
    diagnostics,
    fclt_time_scale,
    interval_at,
    step_sizes,
    validate_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "CriticalValueTable",
    "default_table",
    "lookup",
    "simulate_table",
    "DivergenceError",
    "SyncPath",
    "average_estimate",
    "run",
    "ExperimentConfig",
    "ExperimentReport",
    "build_federation",
    "convergence_curve",
    "load_config",
    "partial_sum_process",
    "run_experiment",
    "ClientModel",
    "Federation",
    "federation_of",
    "true_sandwich",
    "PluginObserver",
    "PluginState",
    "SingularHessian",
    "RScaleObserver",
    "RScaleState",
    "beta_for_schedule",
    "CommunicationSchedule",
    "ExplicitSchedule",
    "ScheduleDiagnostics",
    "diagnostics",
    "fclt_time_scale",
    "interval_at",
    "step_sizes",
    "validate_schedule",
    "__version__",
]
