"""Experiment grids, reports, case selection and plots."""

from .harness import (
    ExperimentGrid,
    GeometricComparison,
    compare_to_geometric,
    mean_trace_baseline,
    parse_grid,
    rank_cells,
    read_grid,
    run_grid,
    select_cases,
    select_from_means,
)
from .plot import plot_trace
from .report import CellResult, ExperimentReport, aggregates, format_table, read_report, write_report

__all__ = [
    "CellResult",
    "ExperimentGrid",
    "ExperimentReport",
    "GeometricComparison",
    "aggregates",
    "compare_to_geometric",
    "format_table",
    "mean_trace_baseline",
    "parse_grid",
    "plot_trace",
    "rank_cells",
    "read_grid",
    "read_report",
    "run_grid",
    "select_cases",
    "select_from_means",
    "write_report",
]
