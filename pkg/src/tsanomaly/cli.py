"""Command-line front end.

Subcommands mirror the pipeline stages so each can be run on its own::

    tsanomaly generate --config exp.json [--out DIR]
    tsanomaly train    --config exp.json [--seed N] [--out DIR]
    tsanomaly detect   --config exp.json [--out DIR]
    tsanomaly evaluate --config exp.json [--out DIR]
    tsanomaly run      --config exp.json [--seed N] [--out DIR]
    tsanomaly report   runA/metrics.csv runB/metrics.csv [--baseline] [--csv OUT]

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 I/O error, 1 anything else. ``TSANOMALY_LOG_LEVEL`` sets log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import experiment as ex
from .detection import GTA_BASELINE, compare_report, read_metrics_csv
from .errors import ConfigError, DivergenceError, StageError

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

logger = logging.getLogger("tsanomaly")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_OTHER


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, cfg) -> Path:
    return Path(args.out if args.out is not None else cfg.output_dir)


def cmd_generate(args) -> int:
    cfg = _config(args)
    path = ex.stage_generate(cfg, _out(args, cfg))
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    history = ex.stage_train(cfg, _out(args, cfg))
    best = history.best
    print(f"best step {best.step}: valid_loss {best.valid_loss:.6g}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    det = ex.stage_detect(cfg, _out(args, cfg))
    print(f"threshold {det.threshold:.6g}: {int(det.anomalous.sum())} of {len(det.anomalous)} points flagged")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    metrics = ex.stage_evaluate(cfg, _out(args, cfg))
    print(compare_report([(cfg.label, metrics)]).to_text(), end="")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    result = ex.run_experiment(cfg, output_dir=_out(args, cfg))
    print(compare_report([(cfg.label, result.metrics)]).to_text(), end="")
    print(f"artifacts in {result.output_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.metrics:
        rows.extend(read_metrics_csv(path))
    report = compare_report(rows, GTA_BASELINE if args.baseline else None)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    print(report.to_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsanomaly", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name, fn, help, seed=False):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
        p.set_defaults(func=fn)

    stage("generate", cmd_generate, "write the synthetic series to DIR/data.csv")
    stage("train", cmd_train, "train and checkpoint a model", seed=True)
    stage("detect", cmd_detect, "predict on the test segment and flag anomalies")
    stage("evaluate", cmd_evaluate, "confusion matrix and metrics from detections")
    stage("run", cmd_run, "all stages end to end", seed=True)

    p = sub.add_parser("report", help="compare metrics.csv files")
    p.add_argument("metrics", nargs="+", help="metrics.csv files")
    p.add_argument("--baseline", action="store_true", help="include the GTA reference row")
    p.add_argument("--csv", default=None, help="also write the sorted table as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("TSANOMALY_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = exit_code_for(exc)
        if code == EXIT_OTHER:
            logger.exception("failed")
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
