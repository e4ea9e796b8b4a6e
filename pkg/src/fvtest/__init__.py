"""Nonparametric tests that a function-valued parameter is constant in its conditioning variable."""

__version__ = "0.1.0"

from .boot import MultiplierConfig, TestResult, joint_statistics, run_test
from .combine import AggregateResult, StatMatrix, aggregate_test, cauchy_combine
from .datamodel import ColumnSchema, Dataset, Observation, load_csv, validate
from .estimands import EstimandConfig, ScoreSet, center_scores, compute_scores
from .funclasses import IndicatorClass, RkhsClass, gamma_grid

__all__ = [
    "AggregateResult",
    "ColumnSchema",
    "Dataset",
    "EstimandConfig",
    "IndicatorClass",
    "MultiplierConfig",
    "Observation",
    "RkhsClass",
    "ScoreSet",
    "StatMatrix",
    "TestResult",
    "aggregate_test",
    "cauchy_combine",
    "center_scores",
    "compute_scores",
    "gamma_grid",
    "joint_statistics",
    "load_csv",
    "run_test",
    "validate",
]
