"""Experiment orchestration: artifacts, sweeps, metrics, benchmarks and the CLI."""

from .artifacts import Artifacts, MissingArtifact, build_artifacts, load_artifacts
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    bench_costs,
    build_oracle,
    init_history,
    mix_counts,
    run_cell,
    run_evasion_sweep,
    run_traffic_mix,
    summarize_sweep,
)
from .metrics import MetricsReport, classification_metrics, rank_auc

__all__ = [
    "Artifacts", "MissingArtifact", "build_artifacts", "load_artifacts",
    "ConfigError", "ExperimentConfig", "load_config",
    "bench_costs", "build_oracle", "init_history", "mix_counts", "run_cell", "run_evasion_sweep",
    "run_traffic_mix", "summarize_sweep",
    "MetricsReport", "classification_metrics", "rank_auc",
]
