"""Label-noise-robust ordinal grading on feature-vector data."""

from .data import Dataset, GeneratorConfig, generate_synthetic, generate_test_set
from .pipeline import ExperimentConfig, HyperParams, run_experiment
from .report import MetricsReport, read_report, write_report

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "GeneratorConfig",
    "HyperParams",
    "MetricsReport",
    "generate_synthetic",
    "generate_test_set",
    "read_report",
    "run_experiment",
    "write_report",
]
