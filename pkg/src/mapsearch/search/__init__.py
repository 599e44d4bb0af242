"""Searchers over a map space: surrogate gradient descent and black-box baselines."""
from .base import (
    TRACE_COLUMNS,
    SearchBudget,
    SearchTrace,
    TraceStep,
    TrueObjective,
    accept,
    attribute_groups,
    neighbor,
    traces_to_csv,
    write_traces,
)
from .baselines import GaConfig, SaConfig, genetic_search, random_search, simulated_annealing
from .gradient import GradSearchConfig, ModelMismatchError, check_model, gradient_search

METHODS = ("mm", "sa", "ga", "random")
