"""End-to-end experiment orchestration and artifact emission.

An experiment is described by a JSON document (see :class:`ExperimentConfig`)
and runs split -> standardize -> window -> train -> predict -> threshold ->
classify -> confusion -> metrics, writing every intermediate product into an
output directory::

    metrics.csv       model,precision,recall,f1
    history.csv       step,epoch,train_loss,valid_loss
    detections.csv    index,prediction,actual,residual,label
    truth.csv         index,row,true_label
    params.json       checkpoint (see models.save_checkpoint)
    stats.json        standardization statistics fitted on the train segment
    manifest.json     config, confusion counts, timings, plateau step, status
    plots/*.svg       loss curve and prediction overlay, each with a CSV twin

Numeric artifacts are a pure function of (config, seed); wall-clock timings
only ever appear in manifest.json.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as dp
from .detection import (
    ANOMALY,
    DEFAULT_K,
    NORMAL,
    ConfusionMatrix,
    DetectionResult,
    Metrics,
    classify_residuals,
    compare_report,
    compute_metrics,
    confusion_matrix,
    detection_threshold,
)
from .errors import ConfigError, DivergenceError, ParameterError, StageError
from .models import (
    DEFAULT_WINDOW_LENGTH,
    LstmConfig,
    ModelConfig,
    TcnConfig,
    config_to_dict,
    count_params,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .training import TrainConfig, TrainHistory, plateau_step, train

logger = logging.getLogger(__name__)

PRESETS = {
    "tcn": lambda c: TcnConfig(input_channels=c),
    "lstm-1": lambda c: LstmConfig(input_channels=c, layer_units=(64,)),
    "lstm-3": lambda c: LstmConfig(input_channels=c, layer_units=(64, 45, 35)),
}

FAILURE_MARKER = "FAILED"


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class CsvSource:
    path: str
    schema: dp.CsvSchema = dp.CsvSchema()


@dataclass(frozen=True)
class ExperimentConfig:
    source: CsvSource | dp.SyntheticSpec
    model: str = "tcn"
    model_overrides: dict = field(default_factory=dict)
    train: TrainConfig = TrainConfig()
    window_length: int = DEFAULT_WINDOW_LENGTH
    target_channel: str = "LIT301"
    train_valid_fraction: float = 0.874
    valid_fraction_of_train: float = 0.1
    k: float = DEFAULT_K
    sd_source: str = "test"
    output_dir: str = "run"
    seed: int = 0
    name: str | None = None
    # when False the synthetic generator seed follows the experiment seed
    pin_data_seed: bool = False

    @property
    def label(self) -> str:
        return self.name or self.model

    def model_config(self) -> ModelConfig:
        channels = len(self.source.schema.channels if isinstance(self.source, CsvSource) else self.source.channels)
        base = PRESETS[self.model](channels)
        overrides = dict(self.model_overrides)
        try:
            return type(base)(**{**_public(base), **overrides})
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"bad model overrides {overrides}: {exc}") from exc

    def with_seed(self, seed: int) -> "ExperimentConfig":
        source = self.source
        if isinstance(source, dp.SyntheticSpec) and not self.pin_data_seed:
            source = replace(source, seed=seed)
        return replace(self, seed=seed, source=source, train=replace(self.train, seed=seed))


def _public(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.init}


def _pick(section: dict, cls, where: str, skip=()) -> dict:
    allowed = {f.name for f in fields(cls) if f.init} - set(skip)
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return dict(section)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Validate and build an :class:`ExperimentConfig` from its JSON form."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {"name", "seed", "output_dir", "data", "target_channel", "window_length",
             "split", "model", "train", "detection"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")

    data = doc.get("data")
    if not isinstance(data, dict):
        raise ConfigError("config needs a 'data' object")
    sources = [k for k in ("csv", "synthetic") if k in data]
    if len(sources) != 1 or set(data) - {"csv", "synthetic"}:
        raise ConfigError("'data' must contain exactly one of 'csv' or 'synthetic'")

    window_length = doc.get("window_length", DEFAULT_WINDOW_LENGTH)
    split_cfg = doc.get("split", {})
    tv = split_cfg.get("train_valid_fraction", 0.874)
    vf = split_cfg.get("valid_fraction_of_train", 0.1)

    if "csv" in data:
        c = dict(data["csv"])
        if "path" not in c:
            raise ConfigError("csv source needs a 'path'")
        path = c.pop("path")
        c = _pick(c, dp.CsvSchema, "data.csv")
        if "channels" in c:
            c["channels"] = tuple(c["channels"])
        source = CsvSource(path, dp.CsvSchema(**c))
    else:
        s = _pick(data["synthetic"], dp.SyntheticSpec, "data.synthetic")
        for key in ("channels", "analyser_means", "analyser_scales"):
            if key in s:
                s[key] = tuple(s[key])
        s.setdefault("seed", seed)
        if s.get("attack_start", "test") == "test":
            length = s.get("length", dp.SyntheticSpec.length)
            attack_length = s.get("attack_length", dp.SyntheticSpec.attack_length)
            try:
                s["attack_start"] = dp.attack_in_test_segment(length, attack_length, window_length, tv)
            except dp.SpecError as exc:
                raise ConfigError(str(exc)) from exc
        source = dp.SyntheticSpec(**s)

    model = doc.get("model", {"preset": "tcn"})
    if isinstance(model, str):
        model = {"preset": model}
    preset = model.get("preset", "tcn")
    if preset not in PRESETS:
        raise ConfigError(f"unknown model preset {preset!r}; choose from {sorted(PRESETS)}")
    overrides = dict(model.get("overrides", {}))
    for key in ("dilations", "layer_units"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])

    train_kw = _pick(doc.get("train", {}), TrainConfig, "train", skip=("seed",))
    det = doc.get("detection", {})
    _pick_keys(det, {"k", "sd_source"}, "detection")

    try:
        cfg = ExperimentConfig(
            source=source,
            model=preset,
            model_overrides=overrides,
            train=TrainConfig(seed=seed, **train_kw),
            window_length=int(window_length),
            target_channel=doc.get("target_channel", "LIT301"),
            train_valid_fraction=tv,
            valid_fraction_of_train=vf,
            k=float(det.get("k", DEFAULT_K)),
            sd_source=det.get("sd_source", "test"),
            output_dir=doc.get("output_dir", "run"),
            seed=seed,
            name=doc.get("name"),
            pin_data_seed="synthetic" in data and "seed" in data["synthetic"],
        )
    except (TypeError, ParameterError, dp.SpecError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.sd_source not in ("test", "valid"):
        raise ConfigError(f"detection.sd_source must be 'test' or 'valid', got {cfg.sd_source!r}")
    if not cfg.k > 0:
        raise ConfigError("detection.k must be positive")
    if cfg.window_length < 1:
        raise ConfigError("window_length must be >= 1")
    channels = cfg.source.schema.channels if isinstance(cfg.source, CsvSource) else cfg.source.channels
    if cfg.target_channel not in channels:
        raise ConfigError(f"target_channel {cfg.target_channel!r} not among {list(channels)}")
    cfg.model_config()
    return cfg


def _pick_keys(section, allowed, where):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(doc)


def config_to_json(cfg: ExperimentConfig) -> dict:
    if isinstance(cfg.source, CsvSource):
        data = {"csv": {"path": cfg.source.path, **_jsonable(asdict(cfg.source.schema))}}
    else:
        synthetic = _jsonable(asdict(cfg.source))
        if not cfg.pin_data_seed:
            # the generator seed follows the experiment seed
            del synthetic["seed"]
        data = {"synthetic": synthetic}
    return {
        "name": cfg.label,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "data": data,
        "target_channel": cfg.target_channel,
        "window_length": cfg.window_length,
        "split": {"train_valid_fraction": cfg.train_valid_fraction,
                  "valid_fraction_of_train": cfg.valid_fraction_of_train},
        "model": {"preset": cfg.model, "overrides": _jsonable(cfg.model_overrides)},
        "train": {k: v for k, v in asdict(cfg.train).items() if k != "seed"},
        "detection": {"k": cfg.k, "sd_source": cfg.sd_source},
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# stages

@dataclass
class PreparedData:
    frame: dp.SeriesFrame
    train: dp.WindowedDataset
    valid: dp.WindowedDataset
    test: dp.WindowedDataset
    stats: dp.StandardizationStats
    segment_rows: dict


def load_frame(cfg: ExperimentConfig) -> dp.SeriesFrame:
    if isinstance(cfg.source, CsvSource):
        return dp.load_csv(cfg.source.path, cfg.source.schema)
    return dp.generate_synthetic(cfg.source)


def prepare_data(cfg: ExperimentConfig, stats: dp.StandardizationStats | None = None) -> PreparedData:
    frame = load_frame(cfg)
    train_f, valid_f, test_f = dp.split(frame, cfg.train_valid_fraction, cfg.valid_fraction_of_train)
    train_s, stats = dp.standardize(train_f, stats)
    valid_s, _ = dp.standardize(valid_f, stats)
    test_s, _ = dp.standardize(test_f, stats)
    w, tc = cfg.window_length, cfg.target_channel
    return PreparedData(
        frame,
        dp.make_windows(train_s, w, tc),
        dp.make_windows(valid_s, w, tc),
        dp.make_windows(test_s, w, tc),
        stats,
        {"train": len(train_f), "valid": len(valid_f), "test": len(test_f)},
    )


def detect(cfg: ExperimentConfig, model_cfg: ModelConfig, params, prepared: PreparedData) -> DetectionResult:
    pred = predict(model_cfg, params, prepared.test.inputs)
    if cfg.sd_source == "valid":
        ref = predict(model_cfg, params, prepared.valid.inputs)
    else:
        ref = pred
    threshold = detection_threshold(ref, cfg.k)
    return classify_residuals(pred, prepared.test.targets, threshold)


def _true_labels(ds: dp.WindowedDataset) -> np.ndarray:
    if ds.target_labels is None:
        raise ParameterError("test data carries no labels; cannot evaluate")
    return ds.target_labels


def write_truth(ds: dp.WindowedDataset, path) -> None:
    labels = _true_labels(ds)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "row", "true_label"])
        for i, (row, lab) in enumerate(zip(ds.target_rows, labels)):
            w.writerow([i, int(row), ANOMALY if lab else NORMAL])


def read_truth(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([r["true_label"] == ANOMALY for r in csv.DictReader(fh)], dtype=bool)


def write_metrics(path, name: str, metrics: Metrics) -> None:
    Path(path).write_text(compare_report([(name, metrics)]).to_csv())


def save_stats(path, stats: dp.StandardizationStats) -> None:
    Path(path).write_text(json.dumps({"mean": [repr(float(x)) for x in stats.mean],
                                      "std": [repr(float(x)) for x in stats.std]}, indent=1) + "\n")


def load_stats(path) -> dp.StandardizationStats:
    doc = json.loads(Path(path).read_text())
    return dp.StandardizationStats(np.array([float(x) for x in doc["mean"]]),
                                   np.array([float(x) for x in doc["std"]]))


# ---------------------------------------------------------------------------
# plots

_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728")


def _svg_plot(path, title: str, xs, series, markers=None, width=800, height=320) -> None:
    """Minimal line chart: ``series`` is a list of (label, ys); ``markers`` x positions in red."""
    xs = np.asarray(xs, dtype=float)
    ys_all = np.concatenate([np.asarray(ys, dtype=float) for _, ys in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 40

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for j, (label, ys) in enumerate(series):
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        color = _COLORS[j % len(_COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"><title>{label}</title></polyline>')
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * j}" text-anchor="end" font-family="sans-serif" font-size="11" fill="{color}">{label}</text>')
    for x, y in markers or ():
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2" fill="#d62728"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def emit_plots(history: TrainHistory, detection: DetectionResult, out_dir) -> list[Path]:
    """Write loss-curve and prediction-overlay SVGs, each next to a CSV with the plotted values."""
    if not history.records:
        raise ParameterError("cannot plot an empty training history")
    if len(detection.residuals) == 0:
        raise ParameterError("cannot plot an empty detection result")
    plots = Path(out_dir) / "plots"
    plots.mkdir(parents=True, exist_ok=True)

    steps = [r.step for r in history.records]
    train_l = [r.train_loss for r in history.records]
    valid_l = [r.valid_loss for r in history.records]
    with open(plots / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "train_loss", "valid_loss"])
        for row in zip(steps, train_l, valid_l):
            w.writerow([row[0], repr(row[1]), repr(row[2])])
    _svg_plot(plots / "loss.svg", "Training and validation loss (MSE)", steps,
              [("train", train_l), ("valid", valid_l)])

    idx = np.arange(len(detection.residuals))
    with open(plots / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "prediction", "actual", "anomaly"])
        for i in idx:
            w.writerow([int(i), repr(float(detection.predictions[i])), repr(float(detection.actuals[i])),
                        int(detection.anomalous[i])])
    marks = [(int(i), float(detection.actuals[i])) for i in idx[detection.anomalous]]
    _svg_plot(plots / "predictions.svg", "Prediction vs actual (standardized)", idx,
              [("actual", detection.actuals), ("prediction", detection.predictions)], marks)
    return [plots / n for n in ("loss.svg", "loss.csv", "predictions.svg", "predictions.csv")]


# ---------------------------------------------------------------------------
# full run

@dataclass
class RunResult:
    output_dir: Path
    metrics: Metrics
    confusion: ConfusionMatrix
    history: TrainHistory
    detection: DetectionResult
    manifest: dict


class _Stages:
    """Times each stage and converts failures into :class:`StageError`."""

    def __init__(self, out: Path, manifest: dict):
        self.out = out
        self.manifest = manifest
        self.seconds: dict[str, float] = manifest.setdefault("stage_seconds", {})

    def run(self, name, fn, *args, **kwargs):
        started = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except Exception as exc:
            self.seconds[name] = time.perf_counter() - started
            self.fail(name, exc)
            raise StageError(name, exc) from exc
        self.seconds[name] = time.perf_counter() - started
        logger.info("stage %s done in %.2fs", name, self.seconds[name])
        return result

    def fail(self, name, exc):
        self.manifest["status"] = "failed"
        self.manifest["failed_stage"] = name
        self.manifest["error"] = f"{type(exc).__name__}: {exc}"
        if isinstance(exc, DivergenceError) and exc.history is not None and exc.history.records:
            exc.history.write_csv(self.out / "history.csv")
        try:
            (self.out / FAILURE_MARKER).write_text(f"{name}\n{type(exc).__name__}: {exc}\n")
            write_manifest(self.out, self.manifest)
        except OSError:
            logger.exception("could not write failure marker")


def write_manifest(out: Path, manifest: dict) -> None:
    (Path(out) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, output_dir=None) -> RunResult:
    """Execute every stage and write the artifact bundle; raises :class:`StageError` on failure."""
    if seed is not None:
        cfg = cfg.with_seed(seed)
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / FAILURE_MARKER).unlink(missing_ok=True)
    except OSError as exc:
        raise StageError("setup", exc) from exc
    model_cfg = cfg.model_config()
    manifest = {
        "status": "running",
        "config": config_to_json(cfg),
        "model": config_to_dict(model_cfg),
        "n_params": count_params(model_cfg),
    }
    st = _Stages(out, manifest)

    prepared = st.run("data", prepare_data, cfg)
    manifest["segment_rows"] = prepared.segment_rows
    manifest["windows"] = {"train": len(prepared.train), "valid": len(prepared.valid), "test": len(prepared.test)}

    params, history = st.run("train", train, model_cfg, cfg.train, prepared.train, prepared.valid)
    detection = st.run("detect", detect, cfg, model_cfg, params, prepared)
    truth = st.run("labels", _true_labels, prepared.test)
    cm = st.run("evaluate", confusion_matrix, detection.anomalous, truth)
    metrics = compute_metrics(cm)

    def write_all():
        write_metrics(out / "metrics.csv", cfg.label, metrics)
        history.write_csv(out / "history.csv")
        detection.write_csv(out / "detections.csv")
        write_truth(prepared.test, out / "truth.csv")
        save_checkpoint(out / "params.json", params, model_cfg)
        save_stats(out / "stats.json", prepared.stats)
        (out / "detection.json").write_text(json.dumps(
            {"threshold": repr(detection.threshold), "k": cfg.k, "sd_source": cfg.sd_source}, indent=1) + "\n")
        emit_plots(history, detection, out)

    st.run("write", write_all)
    manifest.update({
        "status": "ok",
        "threshold": detection.threshold,
        "confusion": asdict(cm),
        "metrics": asdict(metrics),
        "best_step": history.best.step,
        "plateau_step": plateau_step(history),
        "training_seconds": history.duration_seconds,
    })
    try:
        write_manifest(out, manifest)
    except OSError as exc:
        raise StageError("write", exc) from exc
    return RunResult(out, metrics, cm, history, detection, manifest)


# ---------------------------------------------------------------------------
# individual stages for the CLI

def stage_generate(cfg: ExperimentConfig, out: Path) -> Path:
    if not isinstance(cfg.source, dp.SyntheticSpec):
        raise ConfigError("generate needs a synthetic data source")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "data.csv"
    dp.write_csv(dp.generate_synthetic(cfg.source), path)
    return path


def stage_train(cfg: ExperimentConfig, out: Path) -> TrainHistory:
    out.mkdir(parents=True, exist_ok=True)
    model_cfg = cfg.model_config()
    prepared = prepare_data(cfg)
    params, history = train(model_cfg, cfg.train, prepared.train, prepared.valid)
    history.write_csv(out / "history.csv")
    save_checkpoint(out / "params.json", params, model_cfg)
    save_stats(out / "stats.json", prepared.stats)
    _merge_manifest(out, {"best_step": history.best.step, "plateau_step": plateau_step(history),
                          "training_seconds": history.duration_seconds, "config": config_to_json(cfg)})
    return history


def stage_detect(cfg: ExperimentConfig, out: Path) -> DetectionResult:
    params, model_cfg = load_checkpoint(out / "params.json")
    if model_cfg is None:
        model_cfg = cfg.model_config()
    prepared = prepare_data(cfg, load_stats(out / "stats.json"))
    detection = detect(cfg, model_cfg, params, prepared)
    detection.write_csv(out / "detections.csv")
    write_truth(prepared.test, out / "truth.csv")
    (out / "detection.json").write_text(json.dumps(
        {"threshold": repr(detection.threshold), "k": cfg.k, "sd_source": cfg.sd_source}, indent=1) + "\n")
    return detection


def stage_evaluate(cfg: ExperimentConfig, out: Path) -> Metrics:
    meta = json.loads((out / "detection.json").read_text())
    detection = DetectionResult.read_csv(out / "detections.csv", float(meta["threshold"]))
    cm = confusion_matrix(detection.anomalous, read_truth(out / "truth.csv"))
    metrics = compute_metrics(cm)
    write_metrics(out / "metrics.csv", cfg.label, metrics)
    _merge_manifest(out, {"confusion": asdict(cm), "metrics": asdict(metrics), "threshold": detection.threshold})
    return metrics


def _merge_manifest(out: Path, update: dict) -> None:
    path = out / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc.update(update)
    write_manifest(out, doc)
