"""Experiment configuration, runner and command line."""
from .config import ConfigError, ExperimentConfig, build, load_config, parse_text
from .runner import ComparisonReport, aggregate, iteration_checkpoints, run_many, run_seed, surface
