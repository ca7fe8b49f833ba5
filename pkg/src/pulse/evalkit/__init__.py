"""Metrics, bootstrap inference and factorial evaluation."""

from pulse.evalkit.analytics import confidence_bins, tool_usage_stats
from pulse.evalkit.factorial import (
    FactorialResult,
    build_report,
    render_markdown,
    run_factorial,
    validate_report,
)
from pulse.evalkit.metrics import ContinuousMetrics, Score, balanced_accuracy, continuous_metrics, macro_f1
from pulse.evalkit.rows import EvalRow, read_rows, write_rows
from pulse.evalkit.stats import (
    DegenerateDistributionWarning,
    PairingError,
    bootstrap_ci,
    bootstrap_diff_test,
    mann_whitney_u,
    representativeness,
)

__all__ = [
    "ContinuousMetrics",
    "DegenerateDistributionWarning",
    "EvalRow",
    "FactorialResult",
    "PairingError",
    "Score",
    "balanced_accuracy",
    "bootstrap_ci",
    "bootstrap_diff_test",
    "build_report",
    "confidence_bins",
    "continuous_metrics",
    "macro_f1",
    "mann_whitney_u",
    "read_rows",
    "render_markdown",
    "representativeness",
    "run_factorial",
    "tool_usage_stats",
    "validate_report",
]
