"""Differentiable operations over :class:`Tensor`.

Every op computes its forward value with numpy and, when a tape is active and
an input carries gradients, records a closure mapping the upstream gradient
to one gradient per input. Broadcasting is limited to a second operand whose
shape equals the trailing dimensions of the first.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff.tensor import Tensor, as_tensor, current_tape
from src.utils.errors import ContractError, DimensionError, NumericError

Index = Union[np.ndarray, Tuple[np.ndarray, ...]]


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward, flops: int) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is None:
        return out
    tape.forward_flops += int(flops)
    if any(t.requires_grad or t._tracked for t in inputs):
        tape.record(op, out, inputs, backward, flops)
    return out


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> bool:
    """True when ``b`` is broadcast over the leading dimensions of ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim :] == b.shape:
        return True
    raise DimensionError(op, a.shape, b.shape)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    return grad.reshape((-1,) + shape).sum(axis=0)


# Elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast = _check_broadcast("add", a, b)

    def backward(g):
        return g, _unbroadcast(g, b.shape) if broadcast else g

    return _emit("add", a.data + b.data, (a, b), backward, a.size)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast = _check_broadcast("sub", a, b)

    def backward(g):
        return g, -(_unbroadcast(g, b.shape) if broadcast else g)

    return _emit("sub", a.data - b.data, (a, b), backward, a.size)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast = _check_broadcast("mul", a, b)

    def backward(g):
        gb = g * a.data
        return g * b.data, _unbroadcast(gb, b.shape) if broadcast else gb

    return _emit("mul", a.data * b.data, (a, b), backward, a.size)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,), a.size)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a Python constant."""
    factor = float(factor)
    return _emit("scale", a.data * factor, (a,), lambda g: (g * factor,), a.size)


def add_scalar(a: Tensor, value: float) -> Tensor:
    value = float(value)
    return _emit("add_scalar", a.data + value, (a,), lambda g: (g,), a.size)


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = np.power(a.data, exponent)

    def backward(g):
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return _emit("pow", out, (a,), backward, 2 * a.size)


def dropout(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a pregenerated mask (zeros and 1/(1-p) keep factors)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise DimensionError("dropout", a.shape, mask.shape)
    return _emit("dropout", a.data * mask, (a,), lambda g: (g * mask,), a.size)


# Nonlinearities


def relu(a: Tensor) -> Tensor:
    active = a.data > 0
    return _emit("relu", np.where(active, a.data, 0.0), (a,), lambda g: (g * active,), a.size)


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),), 4 * a.size)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),), 4 * a.size)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,), 2 * a.size)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        out = np.log(a.data)
    return _emit("log", out, (a,), lambda g: (g / a.data,), 2 * a.size)


def clamp(a: Tensor, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    """Clip into [low, high]; the gradient is zero where clipping applied."""
    lo = -np.inf if low is None else float(low)
    hi = np.inf if high is None else float(high)
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), a.size)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("maximum", a.shape, b.shape)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)
    return _emit("maximum", out, (a, b), lambda g: (g * pick_a, g * ~pick_a), a.size)


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    """Stable log(exp(a) + exp(b)); -inf operands contribute no gradient."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("logaddexp", a.shape, b.shape)
    out = np.logaddexp(a.data, b.data)

    def backward(g):
        finite = np.isfinite(out)
        with np.errstate(invalid="ignore", over="ignore"):
            wa = np.where(finite, np.exp(a.data - out), 0.0)
            wb = np.where(finite, np.exp(b.data - out), 0.0)
        return g * wa, g * wb

    return _emit("logaddexp", out, (a, b), backward, 6 * a.size)


# Reductions and shape manipulation


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _emit("sum", np.asarray(out), (a,), backward, a.size)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError("reshape", a.shape, shape) from exc
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),), 0)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError("concat", *(t.shape for t in tensors)) from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, tensors, backward, 0)


def slice(a: Tensor, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    """Contiguous ``[start, stop)`` range along ``axis``; full ranges return ``a`` itself."""
    axis = axis % a.ndim
    length = a.shape[axis]
    if not 0 <= start <= stop <= length:
        raise ContractError(f"slice [{start}, {stop}) out of range for axis of length {length}")
    if start == 0 and stop == length:
        return a
    index = [np.s_[:]] * a.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _emit("slice", a.data[index].copy(), (a,), backward, 0)


def gather(a: Tensor, index: Index) -> Tensor:
    """Integer-array indexing ``a.data[index]``; repeated indices accumulate."""
    index = index if isinstance(index, tuple) else (index,)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit("gather", np.array(out), (a,), backward, 0)


def embedding(weight: Tensor, ids: Sequence[int]) -> Tensor:
    """Rows of ``weight`` selected by token ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"token id out of range for embedding of {weight.shape[0]} rows")
    return gather(weight, ids)


# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    m, k = a.shape
    return _emit("matmul", a.data @ b.data, (a, b), backward, 2 * m * k * b.shape[1])


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def pairwise_add(a: Tensor, b: Tensor) -> Tensor:
    """(T, J) and (U, J) to (T, U, J) with ``out[t, u] = a[t] + b[u]``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError("pairwise_add", a.shape, b.shape)
    out = a.data[:, None, :] + b.data[None, :, :]
    return _emit("pairwise_add", out, (a, b), lambda g: (g.sum(axis=1), g.sum(axis=0)), out.size)


# Normalization and sequence ops


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis, stabilized by max subtraction.

    Raises:
        NumericError: If any input is NaN or infinite
    """
    if not np.all(np.isfinite(x.data)):
        raise NumericError("log_softmax received non-finite input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", out, (x,), backward, 5 * x.size)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis of a (T, d) tensor, then apply gain and bias."""
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != gain.shape:
        raise DimensionError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed * gain.data + bias.data

    def backward(g):
        d = x.shape[1]
        g_normed = g * gain.data
        gx = inv_std * (
            g_normed
            - g_normed.mean(axis=1, keepdims=True)
            - normed * (g_normed * normed).sum(axis=1, keepdims=True) / d
        )
        return gx, (g * normed).sum(axis=0), g.sum(axis=0)

    return _emit("layer_norm", out, (x, gain, bias), backward, 8 * x.size)


def gated_scan(gate: Tensor, value: Tensor) -> Tensor:
    """Single-gate recurrence over the first axis.

    ``h[t] = gate[t] * h[t-1] + (1 - gate[t]) * value[t]`` with ``h[-1] = 0``.
    """
    if gate.shape != value.shape or gate.ndim != 2:
        raise DimensionError("gated_scan", gate.shape, value.shape)
    g, v = gate.data, value.data
    steps = g.shape[0]
    h = np.empty_like(v)
    prev = np.zeros(v.shape[1])
    for t in range(steps):
        prev = g[t] * prev + (1.0 - g[t]) * v[t]
        h[t] = prev

    def backward(grad):
        dg = np.empty_like(g)
        dv = np.empty_like(v)
        carry = np.zeros(v.shape[1])
        for t in range(steps - 1, -1, -1):
            dh = grad[t] + carry
            h_prev = h[t - 1] if t > 0 else 0.0
            dg[t] = dh * (h_prev - v[t])
            dv[t] = dh * (1.0 - g[t])
            carry = dh * g[t]
        return dg, dv

    return _emit("gated_scan", h, (gate, value), backward, 3 * g.size)
