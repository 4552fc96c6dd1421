"""Experiment runner, SVG charts and the command-line interface."""
from .charts import emit_chart, render_chart
from .runner import (
    ExperimentConfig,
    PolicySpec,
    RunRecord,
    TrainGrid,
    build_policy,
    mse_report,
    parametrization_report,
    run_sweep,
)

__all__ = [
    "emit_chart",
    "render_chart",
    "ExperimentConfig",
    "PolicySpec",
    "RunRecord",
    "TrainGrid",
    "build_policy",
    "mse_report",
    "parametrization_report",
    "run_sweep",
]
