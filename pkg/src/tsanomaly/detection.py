"""Residual thresholding, confusion matrices and precision/recall/F1."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, ParameterError

SD_FLOOR = 1e-12
DEFAULT_K = 1.75

NORMAL = "normal"
ANOMALY = "anomaly"


@dataclass(frozen=True)
class DetectionResult:
    predictions: np.ndarray
    actuals: np.ndarray
    residuals: np.ndarray
    threshold: float
    anomalous: np.ndarray  # bool, True = anomaly

    @property
    def predicted_labels(self) -> list[str]:
        return [ANOMALY if a else NORMAL for a in self.anomalous]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "prediction", "actual", "residual", "label"])
        for i in range(len(self.residuals)):
            w.writerow([
                i,
                repr(float(self.predictions[i])),
                repr(float(self.actuals[i])),
                repr(float(self.residuals[i])),
                ANOMALY if self.anomalous[i] else NORMAL,
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path, threshold: float) -> "DetectionResult":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            np.array([float(r["prediction"]) for r in rows]),
            np.array([float(r["actual"]) for r in rows]),
            np.array([float(r["residual"]) for r in rows]),
            float(threshold),
            np.array([r["label"] == ANOMALY for r in rows], dtype=bool),
        )


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ParameterError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def as_array(self) -> np.ndarray:
        """2x2 layout [[TP, FN], [FP, TN]]."""
        return np.array([[self.tp, self.fn], [self.fp, self.tn]])


@dataclass(frozen=True)
class Metrics:
    """Precision, recall and F1; ``None`` marks an undefined value (0/0)."""

    precision: float | None
    recall: float | None
    f1: float | None


def detection_threshold(predictions: Sequence[float], k: float = DEFAULT_K) -> float:
    """``k`` times the population standard deviation of ``predictions``."""
    p = np.asarray(predictions, dtype=np.float64)
    if p.size == 0:
        raise ParameterError("detection_threshold needs at least one prediction")
    if not k > 0:
        raise ParameterError(f"k must be positive, got {k}")
    return float(k * max(float(p.std()), SD_FLOOR))


def classify_residuals(predictions, actuals, threshold: float) -> DetectionResult:
    """Flag points whose absolute residual is strictly above ``threshold``."""
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape:
        raise ContractError(f"predictions {p.shape} and actuals {a.shape} differ in length")
    if threshold < 0:
        raise ParameterError(f"threshold must be non-negative, got {threshold}")
    residuals = np.abs(p - a)
    return DetectionResult(p, a, residuals, float(threshold), residuals > threshold)


def _as_flags(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.dtype == bool:
        return arr
    if arr.dtype.kind in "US":
        unknown = set(arr.tolist()) - {NORMAL, ANOMALY, "attack"}
        if unknown:
            raise ContractError(f"unknown class labels {sorted(unknown)}")
        return arr != NORMAL
    return arr.astype(bool)


def confusion_matrix(predicted_labels, true_labels, positive_class: str = ANOMALY) -> ConfusionMatrix:
    """Counts relative to ``positive_class``.

    Labels may be bools (True = anomaly) or the strings ``"normal"`` /
    ``"anomaly"`` (``"attack"`` is accepted as a synonym of anomaly).
    """
    pred = _as_flags(predicted_labels)
    true = _as_flags(true_labels)
    if pred.shape != true.shape:
        raise ContractError(f"label sequences differ in length: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ContractError("confusion_matrix needs at least one label")
    if positive_class == NORMAL:
        pred, true = ~pred, ~true
    elif positive_class != ANOMALY:
        raise ParameterError(f"positive_class must be 'anomaly' or 'normal', got {positive_class!r}")
    tp = int(np.count_nonzero(pred & true))
    fn = int(np.count_nonzero(~pred & true))
    fp = int(np.count_nonzero(pred & ~true))
    tn = int(np.count_nonzero(~pred & ~true))
    return ConfusionMatrix(tp, fn, fp, tn)


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(precision, recall, f1)


GTA_BASELINE = ("GTA", Metrics(0.740, 0.960, 0.840))


@dataclass(frozen=True)
class Report:
    rows: tuple[tuple[str, Metrics], ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "precision", "recall", "f1"])
        for name, m in self.rows:
            w.writerow([name, *(_csv_value(v) for v in (m.precision, m.recall, m.f1))])
        return buf.getvalue()

    def to_text(self, digits: int = 3) -> str:
        header = ("model", "precision", "recall", "f1")
        body = [(name, *(_fmt(v, digits) for v in (m.precision, m.recall, m.f1))) for name, m in self.rows]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(4)]
        lines = []
        for r in [header, *body]:
            lines.append("  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]))
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def names(self) -> list[str]:
        return [n for n, _ in self.rows]


def _csv_value(v):
    return "" if v is None else repr(float(v))


def _fmt(v, digits):
    return "undef" if v is None else f"{v:.{digits}f}"


def compare_report(named_metrics, baseline=None) -> Report:
    """Rows sorted by F1 descending, ties broken by precision; undefined values sort last."""
    rows = list(named_metrics)
    if not rows:
        raise ParameterError("compare_report needs at least one entry")
    if baseline is not None:
        rows.append(baseline)

    def key(item):
        m = item[1]
        return (
            m.f1 is None, -(m.f1 or 0.0),
            m.precision is None, -(m.precision or 0.0),
        )

    return Report(tuple(sorted(rows, key=key)))


def read_metrics_csv(path) -> list[tuple[str, Metrics]]:
    with open(path, newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            vals = [None if r[k] == "" else float(r[k]) for k in ("precision", "recall", "f1")]
            out.append((r["model"], Metrics(*vals)))
    return out
