"""Series ingestion, standardization, chronological splitting and windowing.

Also contains a synthetic generator that mimics the three-sensor water
treatment scenario (one tank-level sensor, two analyser sensors) with a
scripted spoofing attack on the level sensor.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import LabelError, OrderingError, SchemaError, SpecError, SplitError, WindowError

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12
DEFAULT_LABELS = {"Normal": False, "Attack": True}


class DegenerateChannelWarning(UserWarning):
    """A channel had (near) zero spread when fitting standardization stats."""


@dataclass(frozen=True)
class SeriesFrame:
    """Time-indexed multivariate series.

    ``values`` is (T, C) float64; ``labels`` is an optional bool array where
    True marks an attack row.
    """

    timestamps: np.ndarray
    channels: tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.channels):
            raise SchemaError(f"values shape {values.shape} does not match channels {self.channels}")
        ts = np.asarray(self.timestamps)
        if len(ts) != len(values):
            raise SchemaError(f"{len(ts)} timestamps for {len(values)} rows")
        if len(ts) > 1 and not (ts[1:] > ts[:-1]).all():
            bad = int(np.argmin(ts[1:] > ts[:-1])) + 1
            raise OrderingError(f"timestamps not strictly increasing at row {bad}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=bool)
            if len(labels) != len(values):
                raise SchemaError(f"{len(labels)} labels for {len(values)} rows")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.values)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.channel_index(name)]

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise SchemaError(f"channel {name!r} not in {list(self.channels)}") from None

    def rows(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(
            self.timestamps[start:stop],
            self.channels,
            self.values[start:stop],
            None if self.labels is None else self.labels[start:stop],
        )


# ---------------------------------------------------------------------------
# CSV

@dataclass(frozen=True)
class CsvSchema:
    channels: tuple[str, ...] = ("LIT301", "AIT301", "AIT302")
    time_column: str = "time"
    label_column: str | None = "label"
    label_vocabulary: dict = field(default_factory=lambda: dict(DEFAULT_LABELS))


def _parse_time(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    return np.datetime64(text, "ns")


def load_csv(path, schema: CsvSchema = CsvSchema()) -> SeriesFrame:
    """Read a header-first CSV; rows with unparseable numbers are dropped with a warning."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        index = {name: i for i, name in enumerate(header)}
        wanted = [schema.time_column, *schema.channels]
        if schema.label_column is not None:
            wanted.append(schema.label_column)
        for name in wanted:
            if name not in index:
                raise SchemaError(f"{path}: missing column {name!r}")
        times, rows, labels = [], [], []
        for lineno, row in enumerate(reader):
            if not row:
                continue
            try:
                values = [float(row[index[c]]) for c in schema.channels]
                stamp = _parse_time(row[index[schema.time_column]])
            except (ValueError, IndexError):
                logger.warning("%s: rejecting unparseable data row %d", path, lineno)
                continue
            if not all(math.isfinite(v) for v in values):
                logger.warning("%s: rejecting non-finite data row %d", path, lineno)
                continue
            if schema.label_column is not None:
                raw = row[index[schema.label_column]]
                if raw not in schema.label_vocabulary:
                    raise LabelError(f"{path}: data row {lineno} has unknown label {raw!r}", row=lineno)
                labels.append(schema.label_vocabulary[raw])
            times.append(stamp)
            rows.append(values)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(schema.channels))
    return SeriesFrame(
        np.array(times, dtype="datetime64[ns]"),
        schema.channels,
        values,
        np.array(labels, dtype=bool) if schema.label_column is not None else None,
    )


def write_csv(frame: SeriesFrame, path, time_column: str = "time", label_column: str = "label") -> None:
    """Write a frame in the same dialect ``load_csv`` reads (values at 17 significant digits)."""
    names = {v: k for k, v in DEFAULT_LABELS.items()}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [time_column, *frame.channels]
        if frame.labels is not None:
            header.append(label_column)
        writer.writerow(header)
        stamps = np.datetime_as_string(frame.timestamps.astype("datetime64[ns]"), unit="ns")
        for i in range(len(frame)):
            row = [stamps[i] + "Z", *(repr(float(v)) for v in frame.values[i])]
            if frame.labels is not None:
                row.append(names[bool(frame.labels[i])])
            writer.writerow(row)


# ---------------------------------------------------------------------------
# standardization

@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values) - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.std + self.mean


def fit_stats(frame: SeriesFrame) -> StandardizationStats:
    mean = frame.values.mean(axis=0)
    std = frame.values.std(axis=0)  # population
    degenerate = std < SIGMA_FLOOR
    if degenerate.any():
        names = [c for c, d in zip(frame.channels, degenerate) if d]
        warnings.warn(f"constant channel(s) {names}; std floored to {SIGMA_FLOOR}", DegenerateChannelWarning, stacklevel=3)
        std = np.where(degenerate, SIGMA_FLOOR, std)
    return StandardizationStats(mean, std)


def standardize(frame: SeriesFrame, stats: StandardizationStats | None = None):
    """Z-score each channel. Fits on ``frame`` only when ``stats`` is not given."""
    if stats is None:
        stats = fit_stats(frame)
    return replace(frame, values=stats.apply(frame.values)), stats


# ---------------------------------------------------------------------------
# split and windows

def split(frame: SeriesFrame, train_valid_fraction: float = 0.874, valid_fraction_of_train: float = 0.1):
    """Contiguous chronological split into (train, valid, test).

    The test segment gets ``floor((1 - train_valid_fraction) * T)`` rows; the
    last ``floor(valid_fraction_of_train * n)`` rows of the leading segment
    become the validation set.
    """
    for name, f in (("train_valid_fraction", train_valid_fraction), ("valid_fraction_of_train", valid_fraction_of_train)):
        if not 0.0 < f < 1.0:
            raise SplitError(f"{name} must be in (0, 1), got {f}")
    T = len(frame)
    n_train, n_valid, n_test = split_sizes(T, train_valid_fraction, valid_fraction_of_train)
    n_tv = n_train + n_valid
    if min(n_train, n_valid, n_test) < 1:
        raise SplitError(f"split of {T} rows leaves an empty segment (train {n_train}, valid {n_valid}, test {n_test})")
    return frame.rows(0, n_train), frame.rows(n_train, n_tv), frame.rows(n_tv, T)


def split_sizes(T: int, train_valid_fraction: float = 0.874, valid_fraction_of_train: float = 0.1) -> tuple[int, int, int]:
    n_test = math.floor((1.0 - train_valid_fraction) * T + 1e-9)
    n_tv = T - n_test
    n_valid = math.floor(valid_fraction_of_train * n_tv + 1e-9)
    return n_tv - n_valid, n_valid, n_test


@dataclass(frozen=True)
class WindowedDataset:
    """Sliding windows with one-step-ahead targets.

    ``inputs[i]`` covers frame rows ``[i, i+W)`` and ``targets[i]`` is the
    target channel at row ``i+W`` (also recorded in ``target_rows``).
    """

    inputs: np.ndarray
    targets: np.ndarray
    target_labels: np.ndarray | None
    target_rows: np.ndarray

    def __len__(self):
        return len(self.targets)


def make_windows(frame: SeriesFrame, window_length: int, target_channel: str) -> WindowedDataset:
    T = len(frame)
    if window_length < 1 or window_length >= T:
        raise WindowError(f"window length {window_length} needs 1 <= W < T = {T}")
    col = frame.channel_index(target_channel)
    view = np.lib.stride_tricks.sliding_window_view(frame.values, window_length, axis=0)
    # view is (T-W+1, C, W); drop the last window (it has no target)
    inputs = np.ascontiguousarray(view[:-1].transpose(0, 2, 1))
    rows = np.arange(window_length, T)
    labels = None if frame.labels is None else frame.labels[rows].copy()
    return WindowedDataset(inputs, frame.values[rows, col].copy(), labels, rows)


# ---------------------------------------------------------------------------
# synthetic scenario

@dataclass(frozen=True)
class SyntheticSpec:
    """Three-channel tank/analyser scenario with one scripted attack.

    The level channel fills linearly for ``fill_steps`` then drains for
    ``drain_steps``. The two analyser channels are slow Ornstein-Uhlenbeck
    drifts. The attack adds ``attack_magnitude`` (a constant shift, or a
    linear ramp up to it) to the level channel over
    ``[attack_start, attack_start + attack_length)`` and marks those rows.
    """

    length: int = 14996
    seed: int = 0
    channels: tuple[str, ...] = ("LIT301", "AIT301", "AIT302")
    level_low: float = 800.0
    level_high: float = 1000.0
    fill_steps: int = 240
    drain_steps: int = 80
    level_noise: float = 1.0
    analyser_means: tuple[float, ...] = (8.5, 250.0)
    analyser_scales: tuple[float, ...] = (0.05, 4.0)
    analyser_reversion: float = 0.01
    attack_start: int = 9900
    attack_length: int = 270
    attack_kind: str = "shift"
    attack_magnitude: float = 600.0
    start_time: str = "2019-07-20T04:30:00"


def _sawtooth(n: int, fill: int, drain: int, phase: int) -> np.ndarray:
    period = fill + drain
    pos = (np.arange(n) + phase) % period
    return np.where(pos < fill, pos / fill, 1.0 - (pos - fill) / drain)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SeriesFrame:
    n = spec.length
    n_analysers = len(spec.channels) - 1
    if n < 1 or spec.attack_length < 0:
        raise SpecError("length must be positive and attack_length non-negative")
    if spec.attack_start < 0 or spec.attack_start + spec.attack_length > n:
        raise SpecError(
            f"attack rows [{spec.attack_start}, {spec.attack_start + spec.attack_length}) outside series of length {n}"
        )
    if spec.attack_kind not in ("shift", "ramp"):
        raise SpecError(f"attack_kind must be 'shift' or 'ramp', got {spec.attack_kind!r}")
    if n_analysers < 0 or len(spec.analyser_means) < n_analysers or len(spec.analyser_scales) < n_analysers:
        raise SpecError("need a mean and scale for every analyser channel")
    rng = np.random.default_rng(spec.seed)

    phase = int(rng.integers(spec.fill_steps + spec.drain_steps))
    level = spec.level_low + (spec.level_high - spec.level_low) * _sawtooth(n, spec.fill_steps, spec.drain_steps, phase)
    level = level + rng.normal(0.0, spec.level_noise, n)

    cols = [level]
    theta = spec.analyser_reversion
    for j in range(n_analysers):
        mu, scale = spec.analyser_means[j], spec.analyser_scales[j]
        shocks = rng.normal(0.0, scale * math.sqrt(2 * theta), n)
        x = np.empty(n)
        x[0] = mu + scale * rng.normal()
        for t in range(1, n):
            x[t] = x[t - 1] + theta * (mu - x[t - 1]) + shocks[t]
        cols.append(x)
    values = np.column_stack(cols)

    labels = np.zeros(n, dtype=bool)
    a, b = spec.attack_start, spec.attack_start + spec.attack_length
    labels[a:b] = True
    if spec.attack_length and spec.attack_magnitude != 0:
        if spec.attack_kind == "shift":
            offset = np.full(spec.attack_length, spec.attack_magnitude)
        else:
            offset = spec.attack_magnitude * np.arange(1, spec.attack_length + 1) / spec.attack_length
        values[a:b, 0] += offset

    stamps = np.datetime64(spec.start_time, "ns") + np.arange(n) * np.timedelta64(1, "s")
    return SeriesFrame(stamps, spec.channels, values, labels)


def attack_in_test_segment(length: int, attack_length: int, window_length: int,
                           train_valid_fraction: float = 0.874, offset: int | None = None) -> int:
    """Start row placing an attack inside the test segment, past its first window."""
    n_test = split_sizes(length, train_valid_fraction)[2]
    first = length - n_test + window_length
    room = length - first - attack_length
    if room < 0:
        raise SpecError(f"attack of {attack_length} rows does not fit in a {n_test}-row test segment with W={window_length}")
    return first + (room // 2 if offset is None else min(offset, room))
