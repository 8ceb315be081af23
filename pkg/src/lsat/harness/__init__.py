"""Data ingestion, the MNIST experiment ladder, and the command line."""

from .data import load_csv, load_idx, load_mnist, split
from .experiment import (
    MODELS,
    EarlyStopMonitor,
    ExperimentConfig,
    early_stop_monitor,
    run_experiment,
)
