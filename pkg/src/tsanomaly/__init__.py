"""Forecast-residual anomaly detection for multivariate sensor series.

TCN and LSTM forecasters built on a small float64 reverse-mode autodiff
kernel, trained with Adam, and scored with a k-sigma residual rule.
"""

from .autodiff import Tape, Tensor, backward, finite_difference_check
from .data import (
    CsvSchema,
    SeriesFrame,
    StandardizationStats,
    SyntheticSpec,
    WindowedDataset,
    generate_synthetic,
    load_csv,
    make_windows,
    split,
    standardize,
    write_csv,
)
from .detection import (
    ConfusionMatrix,
    DetectionResult,
    Metrics,
    classify_residuals,
    compare_report,
    compute_metrics,
    confusion_matrix,
    detection_threshold,
)
from .models import LstmConfig, TcnConfig, init_params, lstm_cell, lstm_forward, predict, tcn_forward
from .training import AdamState, TrainConfig, TrainHistory, adam_step, mse, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ConfusionMatrix", "CsvSchema", "DetectionResult", "LstmConfig", "Metrics",
    "SeriesFrame", "StandardizationStats", "SyntheticSpec", "Tape", "TcnConfig", "Tensor",
    "TrainConfig", "TrainHistory", "WindowedDataset", "adam_step", "backward", "classify_residuals",
    "compare_report", "compute_metrics", "confusion_matrix", "detection_threshold",
    "finite_difference_check", "generate_synthetic", "init_params", "load_csv", "lstm_cell",
    "lstm_forward", "make_windows", "mse", "predict", "split", "standardize", "tcn_forward",
    "train", "write_csv",
]
