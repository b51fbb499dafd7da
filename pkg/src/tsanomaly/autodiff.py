"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. When a :class:`Tape` is active and at
least one operand requires a gradient, the operation appends a node holding
its operands and a vector-Jacobian product closure. :func:`backward` replays
those closures in reverse order.

Only the handful of primitives needed by the forecasters are provided; there
is no broadcasting beyond the explicit bias add in :func:`affine` and
:func:`conv1d_dilated`.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    EmptyBatchError,
    EvaluationError,
    NonFiniteError,
    ParameterError,
    StateError,
)

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "affine",
    "matmul",
    "add",
    "sub",
    "mul",
    "activation",
    "tanh",
    "sigmoid",
    "conv1d_dilated",
    "dropout_mask",
    "reshape",
    "concat_time",
    "total",
    "mse",
    "backward",
    "grad",
    "finite_difference_check",
]

# Eager NaN/Inf detection after every forward op.
CHECK_FINITE = True


class Tensor:
    """A float64 array plus the flag saying whether gradients flow into it."""

    __slots__ = ("data", "requires_grad", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, Tensor(np.full(self.shape, -1.0)))

    def __getitem__(self, index):
        return _getitem(self, index)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "vjp", "name")

    def __init__(self, out, parents, vjp, name):
        self.out = out
        self.parents = parents
        self.vjp = vjp
        self.name = name


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    on tensors that require gradients are recorded here. A tape may be
    replayed by :func:`backward` exactly once.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        if self.consumed:
            raise StateError("tape was already consumed by backward()")
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(loss, self)


def _active_tape() -> Tape | None:
    return Tape._stack[-1] if Tape._stack else None


def _check(values: np.ndarray, name: str) -> np.ndarray:
    if CHECK_FINITE and not np.isfinite(values).all():
        raise NonFiniteError(f"{name} produced non-finite values")
    return values


def _emit(values, parents: Sequence[Tensor], vjp: Callable, name: str) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed."""
    _check(values, name)
    tape = _active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=needs)
    if needs:
        tape.nodes.append(_Node(out, tuple(parents), vjp, name))
    return out


# ---------------------------------------------------------------------------
# linear algebra

def affine(input, weight, bias) -> Tensor:
    """``input @ weight + bias`` for a 2-D input of shape (batch, in_dim)."""
    x, w, b = _as_tensor(input), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise DimensionError(
            f"affine expects 2-D input, 2-D weight and 1-D bias; got "
            f"input {x.shape}, weight {w.shape}, bias {b.shape}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise DimensionError(
            f"affine shape mismatch: input {x.shape}, weight {w.shape}, bias {b.shape}"
        )
    xd, wd = x.data, w.data

    def vjp(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return _emit(xd @ wd + b.data, (x, w, b), vjp, "affine")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _emit(ad @ bd, (a, b), vjp, "matmul")


# ---------------------------------------------------------------------------
# elementwise

def _same_shape(a: Tensor, b: Tensor, name: str):
    if a.shape != b.shape:
        raise DimensionError(f"{name} needs equal shapes, got {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; pick the matching branch per element
    e = np.exp(-np.abs(x))
    r = 1.0 / (1.0 + e)
    return np.where(x >= 0, r, e * r)


def activation(input, kind: str) -> Tensor:
    """Elementwise ``tanh`` or logistic ``sigmoid``."""
    x = _as_tensor(input)
    _check(x.data, f"{kind} input")
    if kind == "tanh":
        y = np.tanh(x.data)
        return _emit(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")
    if kind == "sigmoid":
        y = _sigmoid(x.data)
        return _emit(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")
    raise ParameterError(f"unknown activation kind {kind!r}; expected 'tanh' or 'sigmoid'")


def tanh(x) -> Tensor:
    return activation(x, "tanh")


def sigmoid(x) -> Tensor:
    return activation(x, "sigmoid")


# ---------------------------------------------------------------------------
# convolution / dropout

def _pads(kernel_length: int, dilation: int, padding: str) -> tuple[int, int]:
    total = (kernel_length - 1) * dilation
    if padding == "causal":
        return total, 0
    if padding == "same":
        return total // 2, total - total // 2
    raise ParameterError(f"padding must be 'causal' or 'same', got {padding!r}")


def conv1d_dilated(input, kernels, bias, dilation: int = 1, padding: str = "causal") -> Tensor:
    """Dilated 1-D convolution over time.

    ``input`` is (T, C_in) or batched (B, T, C_in); ``kernels`` is
    (K, C_in, C_out). Output keeps length T. With causal padding, tap ``k``
    reads ``input[t - (K-1-k)*dilation]``; out-of-range rows read as zero.
    """
    x, w, b = _as_tensor(input), _as_tensor(kernels), _as_tensor(bias)
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ParameterError(f"dilation must be a positive integer, got {dilation!r}")
    if w.ndim != 3 or w.shape[0] < 1:
        raise ParameterError(f"kernels must be a non-empty (K, C_in, C_out) array, got {w.shape}")
    left, right = _pads(w.shape[0], dilation, padding)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise DimensionError(f"conv1d input must be (T, C) or (B, T, C), got {x.shape}")
    B, T, C = xd.shape
    K, Cw, Co = w.shape
    if T < 1:
        raise ParameterError("conv1d input has no timesteps")
    if Cw != C or b.shape != (Co,):
        raise DimensionError(
            f"conv1d shape mismatch: input {x.shape}, kernels {w.shape}, bias {b.shape}"
        )
    xp = np.pad(xd, ((0, 0), (left, right), (0, 0)))
    # cols[b, t, k, c] = xp[b, t + k*dilation, c]
    cols = np.stack([xp[:, k * dilation:k * dilation + T, :] for k in range(K)], axis=2)
    flat = cols.reshape(B * T, K * C)
    wd = w.data.reshape(K * C, Co)
    out = (flat @ wd).reshape(B, T, Co) + b.data
    if squeeze:
        out = out[0]

    def vjp(g):
        g3 = g[None] if squeeze else g
        g2 = g3.reshape(B * T, Co)
        gw = (flat.T @ g2).reshape(K, C, Co)
        gcols = (g2 @ wd.T).reshape(B, T, K, C)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, k * dilation:k * dilation + T, :] += gcols[:, :, k, :]
        gx = gxp[:, left:left + T, :]
        return (gx[0] if squeeze else gx), gw, g2.sum(axis=0)

    return _emit(out, (x, w, b), vjp, "conv1d_dilated")


def dropout_mask(input, rate: float, rng_seed: int, training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    x = _as_tensor(input)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = np.random.default_rng(rng_seed).random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return _emit(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


# ---------------------------------------------------------------------------
# shape / reductions

def _getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _emit(x.data[index], (x,), vjp, "getitem")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat_time(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate (B, t_i, F) tensors along axis 1."""
    parts = [_as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[1] for p in parts])[:-1]
    return _emit(
        np.concatenate([p.data for p in parts], axis=1),
        parts,
        lambda g: tuple(np.split(g, sizes, axis=1)),
        "concat_time",
    )


def total(x) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    x = _as_tensor(x)
    shape = x.shape
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "total")


def mse(predictions, targets) -> Tensor:
    """Mean squared error ``(1/N) * sum((pred - target)**2)`` as a 0-d tensor."""
    p, t = _as_tensor(predictions), _as_tensor(targets)
    if p.shape != t.shape:
        raise DimensionError(f"mse needs equal shapes, got {p.shape} and {t.shape}")
    n = p.size
    if n == 0:
        raise EmptyBatchError("mse of an empty batch")
    diff = p.data - t.data
    scale = 2.0 / n

    def vjp(g):
        gp = float(g) * scale * diff
        return gp, -gp

    return _emit(np.asarray(np.mean(diff * diff)), (p, t), vjp, "mse")


# ---------------------------------------------------------------------------
# reverse pass

def backward(loss: Tensor, record: Tape) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every leaf on ``record``.

    Leaves are tensors created with ``requires_grad=True`` outside the tape.
    The returned dict is keyed by the leaf tensor objects themselves.
    """
    if record.consumed:
        raise StateError("tape was already consumed by backward()")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(n.out) for n in record.nodes}
    if id(loss) not in produced:
        raise ContractError("loss was not produced by an operation on this tape")
    record.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(record.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key not in produced:
                leaves[key] = parent
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    record.nodes.clear()
    return {leaf: grads[key] for key, leaf in leaves.items()}


def grad(function: Callable[[Tensor], Tensor], point) -> tuple[float, np.ndarray]:
    """Value and gradient of a scalar ``function`` at ``point``."""
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        y = function(x)
    value = float(y.data)
    if not math.isfinite(value):
        raise EvaluationError("function returned a non-finite value")
    g = backward(y, tape).get(x)
    return value, np.zeros(x.shape) if g is None else g


def finite_difference_check(function: Callable[[Tensor], Tensor], point, epsilon: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central| / max(1, |analytic|)``."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    x0 = np.array(point, dtype=np.float64)
    try:
        _, analytic = grad(function, x0)
    except NonFiniteError as exc:
        raise EvaluationError(str(exc)) from exc

    def f(values):
        try:
            out = float(function(Tensor(values)).data)
        except NonFiniteError as exc:
            raise EvaluationError(str(exc)) from exc
        if not math.isfinite(out):
            raise EvaluationError("function returned a non-finite value")
        return out

    flat = x0.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = f(x0)
        flat[i] = orig - epsilon
        down = f(x0)
        flat[i] = orig
        numeric = (up - down) / (2.0 * epsilon)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
