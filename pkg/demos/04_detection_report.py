"""
From residuals to a comparison table
====================================

A point is flagged when |prediction - actual| exceeds k times the standard
deviation of the predictions. The flags meet the ground-truth labels in a
confusion matrix, and precision, recall and F1 land in a sorted report next
to the published GTA numbers. The first half runs the whole pipeline on a
small desk-scale configuration; the second half scores the three reference
confusion matrices.
"""

import json
import tempfile
from pathlib import Path

from tsanomaly.detection import GTA_BASELINE, ConfusionMatrix, compare_report, compute_metrics
from tsanomaly.experiment import load_config, run_experiment

config = Path(__file__).resolve().parent.parent / "configs" / "desk-tcn.json"
cfg = load_config(config)

with tempfile.TemporaryDirectory() as out:
    result = run_experiment(cfg, output_dir=out)
    det = result.detection
    print(f"threshold {det.threshold:.4f} (k={cfg.k}); flagged {int(det.anomalous.sum())} of {len(det.anomalous)}")
    print("confusion [[TP, FN], [FP, TN]]:", result.confusion.as_array().tolist())
    print(compare_report([("desk TCN", result.metrics)], GTA_BASELINE).to_text())
    manifest = json.loads((Path(out) / "manifest.json").read_text())
    print("artifacts:", sorted(p.name for p in Path(out).iterdir()))
    print("stage seconds:", {k: round(v, 2) for k, v in manifest["stage_seconds"].items()})

# the three reference matrices, (tp, fn, fp, tn) with "normal" as the positive class
reference = {
    "TCN": ConfusionMatrix(1546, 166, 99, 78),
    "LSTM-1": ConfusionMatrix(1403, 309, 85, 92),
    "LSTM-3": ConfusionMatrix(1480, 232, 89, 88),
}
rows = [(name, compute_metrics(cm)) for name, cm in reference.items()]
report = compare_report(rows, GTA_BASELINE)
print(report.to_text(digits=5))
