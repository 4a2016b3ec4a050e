"""Scenario configs, paper-level experiments, and report emission."""
from rnlab.experiments.config import ExperimentConfig, load_config, parse_config
from rnlab.experiments.report import ExperimentReport, Table, emit_report, read_table_csv
from rnlab.experiments.scenarios import (
    SCENARIO_RUNNERS,
    run_commutator,
    run_hypothesis_check,
    run_lemma_sweep,
    run_negative_example,
    run_selection_experiment,
    run_simulate,
    run_stability,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "SCENARIO_RUNNERS",
    "Table",
    "emit_report",
    "load_config",
    "parse_config",
    "read_table_csv",
    "run_commutator",
    "run_hypothesis_check",
    "run_lemma_sweep",
    "run_negative_example",
    "run_selection_experiment",
    "run_simulate",
    "run_stability",
]
