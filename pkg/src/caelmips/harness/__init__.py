"""Experiment orchestration: configs, seeded trials, sweeps and outputs."""
from .config import ConfigError, ExperimentConfig, ObdConfig, PRESETS, load_config
from .experiment import (
    CdfTable,
    MetricsRow,
    RunResult,
    TrialResult,
    aggregate,
    ground_truth,
    relative_error_cdf,
    run_obd,
    run_synthetic,
    run_trial,
    squared_errors,
    trial_seed,
    write_obd_surrogate,
)
from .output import emit_outputs, read_cdf, read_metrics
