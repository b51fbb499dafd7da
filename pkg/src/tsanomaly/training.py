"""Mini-batch Adam training with periodic validation and best-checkpoint selection."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DivergenceError, NonFiniteError, ParameterError
from .models import ModelConfig, ModelParams, forward_batch, init_params, predict

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamState",
    "HistoryRecord",
    "TrainHistory",
    "mse",
    "adam_step",
    "train",
    "plateau_step",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    validate_every_steps: int = 50
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # "raw": eps added to sqrt(v) with bias correction folded into the step size;
    # "corrected": eps added to sqrt(v_hat)
    epsilon_placement: str = "raw"
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "validate_every_steps"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ParameterError("Adam betas must lie in (0, 1)")
        if not self.learning_rate > 0 or not self.adam_epsilon > 0:
            raise ParameterError("learning_rate and adam_epsilon must be positive")
        if self.epsilon_placement not in ("raw", "corrected"):
            raise ParameterError(f"epsilon_placement must be 'raw' or 'corrected', got {self.epsilon_placement!r}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


@dataclass(frozen=True)
class HistoryRecord:
    step: int
    epoch: int
    train_loss: float
    valid_loss: float


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    duration_seconds: float = 0.0
    best_index: int | None = None

    @property
    def best(self) -> HistoryRecord | None:
        return None if self.best_index is None else self.records[self.best_index]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "epoch", "train_loss", "valid_loss"])
        for r in self.records:
            writer.writerow([r.step, r.epoch, repr(r.train_loss), repr(r.valid_loss)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        records = [
            HistoryRecord(int(r["step"]), int(r["epoch"]), float(r["train_loss"]), float(r["valid_loss"]))
            for r in rows
        ]
        best = min(range(len(records)), key=lambda i: (records[i].valid_loss, i)) if records else None
        return cls(records=records, best_index=best)


def mse(predictions, targets):
    """Mean squared error; returns a differentiable 0-d Tensor when inputs are tracked."""
    out = ad.mse(predictions, targets)
    return out if out.requires_grad else float(out.data)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig):
    """One Adam update. Returns new ``(params, state)``; inputs are not mutated."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter {name!r}", parameter=name)
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    t = state.t + 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        if cfg.epsilon_placement == "raw":
            step = cfg.learning_rate * math.sqrt(bc2) / bc1
            new_params[name] = p - step * m / (np.sqrt(v) + eps)
        else:
            new_params[name] = p - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t)


def _loss_and_grads(model_cfg, params, x, y, seed):
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    with Tape() as tape:
        pred = forward_batch(model_cfg, leaves, x, mode="train", rng_seed=seed)
        loss = ad.mse(pred, y)
    g = ad.backward(loss, tape)
    return float(loss.data), {k: g.get(t, np.zeros_like(params[k])) for k, t in leaves.items()}


def _validation_loss(model_cfg, params, data) -> float:
    pred = predict(model_cfg, params, data.inputs)
    diff = pred - data.targets
    return float(np.mean(diff * diff))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, train_data, valid_data,
          init: ModelParams | None = None) -> tuple[ModelParams, TrainHistory]:
    """Train on sequential mini-batches; return the best-validation checkpoint and history.

    Validation runs every ``validate_every_steps`` optimizer steps and once
    more after the final step if it did not coincide with a scheduled point.
    ``train_loss`` in each record is the mean mini-batch loss since the
    previous record.
    """
    if len(train_data) == 0 or len(valid_data) == 0:
        raise ParameterError("train and valid datasets must be non-empty")
    params = init if init is not None else init_params(model_cfg, train_cfg.seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    best_params = params
    best_loss = math.inf
    pending: list[float] = []
    n = len(train_data)
    step = 0
    started = time.perf_counter()

    def record(epoch):
        nonlocal best_loss, best_params
        valid_loss = _validation_loss(model_cfg, params, valid_data)
        if not math.isfinite(valid_loss):
            raise DivergenceError(f"validation loss became non-finite at step {step}", history)
        history.records.append(HistoryRecord(step, epoch, float(np.mean(pending)), valid_loss))
        pending.clear()
        if valid_loss < best_loss:
            best_loss = valid_loss
            best_params = params
            history.best_index = len(history.records) - 1
        logger.debug("step %d epoch %d train %.6g valid %.6g", step, epoch, history.records[-1].train_loss, valid_loss)

    epoch = 0
    try:
        for epoch in range(1, train_cfg.epochs + 1):
            order = np.arange(n)
            if train_cfg.shuffle:
                order = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
            for start in range(0, n, train_cfg.batch_size):
                idx = order[start:start + train_cfg.batch_size]
                step += 1
                drop_seed = int(np.random.SeedSequence([train_cfg.seed, step]).generate_state(1)[0])
                loss, grads = _loss_and_grads(model_cfg, params, train_data.inputs[idx], train_data.targets[idx], drop_seed)
                if not math.isfinite(loss):
                    raise DivergenceError(f"training loss became non-finite at step {step}", history)
                params, state = adam_step(params, grads, state, train_cfg)
                history.step_losses.append(loss)
                pending.append(loss)
                if step % train_cfg.validate_every_steps == 0:
                    record(epoch)
        if pending:
            record(epoch)
    except NonFiniteError as exc:
        history.duration_seconds = time.perf_counter() - started
        raise DivergenceError(f"training diverged at step {step}: {exc}", history) from exc
    except DivergenceError as exc:
        history.duration_seconds = time.perf_counter() - started
        exc.history = history
        raise
    history.duration_seconds = time.perf_counter() - started
    return best_params, history


def plateau_step(history: TrainHistory, tolerance: float = 0.05) -> int:
    """First validation step whose loss is within ``tolerance`` (relative) of the minimum."""
    if not history.records:
        raise ParameterError("empty history")
    lowest = min(r.valid_loss for r in history.records)
    for r in history.records:
        if r.valid_loss <= lowest * (1.0 + tolerance):
            return r.step
    return history.records[-1].step
