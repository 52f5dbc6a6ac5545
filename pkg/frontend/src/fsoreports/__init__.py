"""Charting for fsosim CSV outputs; see reporting.ReportSpec and reporting.render."""

from .reporting import CHART_KINDS, ReportSpec, aggregate, load_inputs, render  # noqa: F401

__version__ = "0.1.0"
