"""TCN and LSTM one-step-ahead forecasters.

Both models map a window of shape (W, C) to a scalar prediction of the
target channel at the next step. Parameters live in a plain ordered dict of
float64 arrays (``ModelParams``) so they can be checkpointed, copied and fed
to the optimizer without any wrapper classes.

LSTM gate order inside the stacked weight matrices is ``f, i, g, o``: for a
layer with U units, columns ``[0:U]`` belong to the forget gate, ``[U:2U]``
to the input gate, ``[2U:3U]`` to the candidate and ``[3U:4U]`` to the
output gate.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, EmptyWindowError, ParameterError

ModelParams = dict[str, np.ndarray]

DEFAULT_WINDOW_LENGTH = 30


@dataclass(frozen=True)
class TcnConfig:
    input_channels: int = 3
    num_blocks: int = 3
    filters: int = 84
    kernel_length: int = 5
    dilations: tuple[int, ...] = (1, 2, 4)
    padding: str = "causal"
    activation: str = field(default="tanh", init=False)

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if len(self.dilations) != self.num_blocks:
            raise ParameterError(
                f"need one dilation per block: {self.num_blocks} blocks, dilations {self.dilations}"
            )
        if self.filters < 1 or self.kernel_length < 1 or self.input_channels < 1:
            raise ParameterError("filters, kernel_length and input_channels must be >= 1")
        if any(d < 1 for d in self.dilations):
            raise ParameterError(f"dilations must be positive, got {self.dilations}")
        if self.padding not in ("causal", "same"):
            raise ParameterError(f"padding must be 'causal' or 'same', got {self.padding!r}")

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_length - 1) * sum(self.dilations)


@dataclass(frozen=True)
class LstmConfig:
    input_channels: int = 3
    layer_units: tuple[int, ...] = (64,)
    dropout_rate: float = 0.2
    activation: str = field(default="tanh", init=False)

    def __post_init__(self):
        object.__setattr__(self, "layer_units", tuple(int(u) for u in self.layer_units))
        if not self.layer_units or any(u < 1 for u in self.layer_units):
            raise ParameterError(f"layer_units must be non-empty and positive, got {self.layer_units}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.input_channels < 1:
            raise ParameterError("input_channels must be >= 1")


ModelConfig = Union[TcnConfig, LstmConfig]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor of a model, in canonical order."""
    shapes: dict[str, tuple[int, ...]] = {}
    if isinstance(config, TcnConfig):
        c_in = config.input_channels
        for i in range(config.num_blocks):
            shapes[f"block{i}.kernel"] = (config.kernel_length, c_in, config.filters)
            shapes[f"block{i}.bias"] = (config.filters,)
            c_in = config.filters
    elif isinstance(config, LstmConfig):
        c_in = config.input_channels
        for i, units in enumerate(config.layer_units):
            shapes[f"lstm{i}.W_x"] = (c_in, 4 * units)
            shapes[f"lstm{i}.W_h"] = (units, 4 * units)
            shapes[f"lstm{i}.b"] = (4 * units,)
            c_in = units
    else:
        raise ParameterError(f"unknown model config {type(config).__name__}")
    shapes["head.W"] = (c_in, 1)
    shapes["head.b"] = (1,)
    return shapes


def count_params(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 3:  # conv kernel (K, C_in, C_out)
        return shape[0] * shape[1], shape[0] * shape[2]
    return shape[0], shape[1]


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(name, shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def _as_tensors(params) -> dict[str, Tensor]:
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


def _check_window(x: Tensor, channels: int):
    if x.ndim not in (2, 3):
        raise DimensionError(f"window must be (W, C) or (B, W, C), got {x.shape}")
    if x.shape[-2] == 0:
        raise EmptyWindowError("window has no timesteps")
    if x.shape[-1] != channels:
        raise DimensionError(f"window has {x.shape[-1]} channels, model expects {channels}")


# ---------------------------------------------------------------------------
# LSTM

def lstm_cell(x_t, h_prev, c_prev, w_x, w_h, b) -> tuple[Tensor, Tensor]:
    """One LSTM step; accepts unbatched (C,) or batched (B, C) inputs."""
    x_t, h_prev, c_prev = ad._as_tensor(x_t), ad._as_tensor(h_prev), ad._as_tensor(c_prev)
    w_x, w_h = ad._as_tensor(w_x), ad._as_tensor(w_h)
    units = w_h.shape[0]
    single = x_t.ndim == 1
    if single:
        x_t = ad.reshape(x_t, (1, -1))
        h_prev = ad.reshape(h_prev, (1, -1))
        c_prev = ad.reshape(c_prev, (1, -1))
    if w_h.shape != (units, 4 * units) or w_x.shape[1] != 4 * units:
        raise DimensionError(f"gate weight shapes inconsistent: W_x {w_x.shape}, W_h {w_h.shape}")
    if h_prev.shape[-1] != units or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"state shapes {h_prev.shape}/{c_prev.shape} do not match {units} units"
        )
    z = ad.affine(x_t, w_x, b) + ad.matmul(h_prev, w_h)
    f = ad.sigmoid(z[:, 0:units])
    i = ad.sigmoid(z[:, units:2 * units])
    g = ad.tanh(z[:, 2 * units:3 * units])
    o = ad.sigmoid(z[:, 3 * units:4 * units])
    c = f * c_prev + i * g
    h = o * ad.tanh(c)
    if single:
        return ad.reshape(h, (units,)), ad.reshape(c, (units,))
    return h, c


def lstm_layer(x_seq, w_x, w_h, b) -> Tensor:
    """Run one LSTM layer over a (B, W, C) sequence from zero state; returns all hidden states (B, W, U).

    Recorded as a single tape node whose backward pass is hand-written
    backpropagation through time. Numerically equivalent to unrolling
    :func:`lstm_cell`.
    """
    x_seq, w_x, w_h, b = (ad._as_tensor(t) for t in (x_seq, w_x, w_h, b))
    B, W, C = x_seq.shape
    U = w_h.shape[0]
    if w_x.shape != (C, 4 * U) or w_h.shape != (U, 4 * U) or b.shape != (4 * U,):
        raise DimensionError(f"gate shapes inconsistent: x {x_seq.shape}, W_x {w_x.shape}, W_h {w_h.shape}, b {b.shape}")
    wx, wh = w_x.data, w_h.data
    xd = x_seq.data
    # time-major buffers keep every per-step slice contiguous
    zx = (xd.transpose(1, 0, 2).reshape(W * B, C) @ wx).reshape(W, B, 4 * U) + b.data
    gates = np.empty((W, B, 4 * U))
    cs = np.zeros((W + 1, B, U))  # cs[t + 1] is the cell state after step t
    tcs = np.empty((W, B, U))
    hs = np.zeros((W + 1, B, U))
    for t in range(W):
        z = zx[t] + hs[t] @ wh
        a = gates[t]
        a[:] = ad._sigmoid(z)
        a[:, 2 * U:3 * U] = np.tanh(z[:, 2 * U:3 * U])
        c = cs[t + 1]
        np.multiply(a[:, :U], cs[t], out=c)
        c += a[:, U:2 * U] * a[:, 2 * U:3 * U]
        np.tanh(c, out=tcs[t])
        np.multiply(a[:, 3 * U:], tcs[t], out=hs[t + 1])

    def vjp(g_h):
        g_h = g_h.transpose(1, 0, 2)
        dz_all = np.empty((W, B, 4 * U))
        dh_next = np.zeros((B, U))
        dc_next = np.zeros((B, U))
        for t in range(W - 1, -1, -1):
            a = gates[t]
            f, i, gg, o = a[:, :U], a[:, U:2 * U], a[:, 2 * U:3 * U], a[:, 3 * U:]
            tc = tcs[t]
            dh = g_h[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[t]
            dz[:, :U] = dc * cs[t]
            dz[:, U:2 * U] = dc * gg
            dz[:, 2 * U:3 * U] = dc * i
            dz[:, 3 * U:] = dh * tc
            dc_next = dc * f
            # gate derivatives: sigmoid' = s(1-s) except the tanh candidate
            a_d = a * (1.0 - a)
            a_d[:, 2 * U:3 * U] = 1.0 - gg * gg
            dz *= a_d
            dh_next = dz @ wh.T
        dz_flat = dz_all.reshape(W * B, 4 * U)
        d_wx = xd.transpose(1, 0, 2).reshape(W * B, C).T @ dz_flat
        d_wh = hs[:-1].reshape(W * B, U).T @ dz_flat
        d_x = (dz_flat @ wx.T).reshape(W, B, C).transpose(1, 0, 2)
        return d_x, d_wx, d_wh, dz_flat.sum(axis=0)

    hs_out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))
    return ad._emit(hs_out, (x_seq, w_x, w_h, b), vjp, "lstm_layer")


def _lstm_apply(x: Tensor, config: LstmConfig, params: dict[str, Tensor], training: bool, seed: int,
                fused: bool = True) -> Tensor:
    """Batched forward: (B, W, C) -> (B,).

    Dropout (train mode only) is applied to every layer's hidden sequence,
    including the top layer before the regression head.
    """
    batch, steps, _ = x.shape
    seq = x
    for layer, units in enumerate(config.layer_units):
        w_x, w_h, b = params[f"lstm{layer}.W_x"], params[f"lstm{layer}.W_h"], params[f"lstm{layer}.b"]
        if fused:
            seq = lstm_layer(seq, w_x, w_h, b)
        else:
            h = Tensor(np.zeros((batch, units)))
            c = Tensor(np.zeros((batch, units)))
            out = []
            for t in range(steps):
                h, c = lstm_cell(seq[:, t, :], h, c, w_x, w_h, b)
                out.append(ad.reshape(h, (batch, 1, units)))
            seq = ad.concat_time(out)
        if training and config.dropout_rate > 0:
            layer_seed = int(np.random.SeedSequence([seed, layer]).generate_state(1)[0])
            seq = ad.dropout_mask(seq, config.dropout_rate, layer_seed)
    y = ad.affine(seq[:, -1, :], params["head.W"], params["head.b"])
    return ad.reshape(y, (batch,))


def lstm_forward(window, config: LstmConfig, params, mode: str = "infer", rng_seed: int = 0,
                 fused: bool = True):
    """Predict the next target value from one (W, C) window.

    Returns a 0-d Tensor when any parameter requires gradients (so it can be
    differentiated), otherwise a float.
    """
    x = ad._as_tensor(window)
    _check_window(x, config.input_channels)
    batched = x.ndim == 3
    if not batched:
        x = ad.reshape(x, (1,) + x.shape)
    y = _lstm_apply(x, config, _as_tensors(params), _training(mode), rng_seed, fused)
    return _finish(y, batched)


# ---------------------------------------------------------------------------
# TCN

def _tcn_features(x: Tensor, config: TcnConfig, params: dict[str, Tensor]) -> Tensor:
    h = x
    for i, dilation in enumerate(config.dilations):
        h = ad.conv1d_dilated(h, params[f"block{i}.kernel"], params[f"block{i}.bias"], dilation, config.padding)
        h = ad.tanh(h)
    return h


def tcn_features(window, config: TcnConfig, params) -> np.ndarray:
    """Top-block feature map, shape (W, filters) or (B, W, filters)."""
    x = ad._as_tensor(window)
    _check_window(x, config.input_channels)
    return _tcn_features(x, config, _as_tensors(params)).data


def _tcn_apply(x: Tensor, config: TcnConfig, params: dict[str, Tensor]) -> Tensor:
    h = _tcn_features(x, config, params)
    last = h[:, -1, :]
    y = ad.affine(last, params["head.W"], params["head.b"])
    return ad.reshape(y, (x.shape[0],))


def tcn_forward(window, config: TcnConfig, params):
    """Predict the next target value from one (W, C) window (or a (B, W, C) batch)."""
    x = ad._as_tensor(window)
    _check_window(x, config.input_channels)
    batched = x.ndim == 3
    if not batched:
        x = ad.reshape(x, (1,) + x.shape)
    return _finish(_tcn_apply(x, config, _as_tensors(params)), batched)


# ---------------------------------------------------------------------------
# shared entry points

def _training(mode: str) -> bool:
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    return mode == "train"


def _finish(y: Tensor, batched: bool):
    if batched:
        return y if y.requires_grad else y.data
    y = ad.reshape(y, ())
    return y if y.requires_grad else float(y.data)


def forward_batch(config: ModelConfig, params, inputs, mode: str = "infer", rng_seed: int = 0) -> Tensor:
    """Batched forward (B, W, C) -> Tensor (B,); used by the training loop."""
    x = ad._as_tensor(inputs)
    _check_window(x, config.input_channels)
    if x.ndim != 3:
        raise DimensionError(f"forward_batch expects (B, W, C), got {x.shape}")
    p = _as_tensors(params)
    if isinstance(config, TcnConfig):
        return _tcn_apply(x, config, p)
    return _lstm_apply(x, config, p, _training(mode), rng_seed)


def predict(config: ModelConfig, params: ModelParams, inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Inference-mode predictions for (N, W, C) inputs, evaluated in fixed-order chunks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    out = np.empty(len(inputs))
    for start in range(0, len(inputs), batch_size):
        chunk = inputs[start:start + batch_size]
        out[start:start + len(chunk)] = forward_batch(config, params, chunk).data
    return out


# ---------------------------------------------------------------------------
# checkpoints

def config_to_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d.pop("activation", None)
    d["kind"] = "tcn" if isinstance(config, TcnConfig) else "lstm"
    for key in ("dilations", "layer_units"):
        if key in d:
            d[key] = list(d[key])
    return d


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "tcn":
        return TcnConfig(**d)
    if kind == "lstm":
        return LstmConfig(**d)
    raise ParameterError(f"unknown model kind {kind!r}")


def save_checkpoint(path, params: ModelParams, config: ModelConfig | None = None) -> None:
    """JSON manifest: name -> shape -> base64 little-endian float64 payload."""
    tensors = [
        {
            "name": name,
            "shape": list(arr.shape),
            "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
        }
        for name, arr in params.items()
    ]
    doc = {"format": "tsanomaly-params/1", "dtype": "<f8", "tensors": tensors}
    if config is not None:
        doc["config"] = config_to_dict(config)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig | None]:
    doc = json.loads(Path(path).read_text())
    params: ModelParams = {}
    for entry in doc["tensors"]:
        raw = base64.b64decode(entry["data"])
        params[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    config = config_from_dict(doc["config"]) if "config" in doc else None
    return params, config
