"""Central finite-difference oracle for tape gradients."""

from typing import Callable, Dict, Sequence

import numpy as np

from src.autodiff.tensor import Tape, Tensor


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``tensor.data``.

    ``fn`` must read ``tensor.data`` afresh on each call; entries are perturbed
    in place and restored.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max of ``|a - n| / max(1, |a|, |n|)`` over all entries."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5
) -> Dict[int, float]:
    """Compare tape gradients of ``fn`` with finite differences.

    Args:
        fn: Builds the scalar loss from the current tensor values
        tensors: Inputs to check
        h: Finite-difference step

    Returns:
        Relative error per input position
    """
    with Tape() as tape:
        loss = fn()
    analytic = tape.gradients(loss, tensors)
    return {
        i: relative_error(grad, numerical_gradient(fn, tensor, h))
        for i, (tensor, grad) in enumerate(zip(tensors, analytic))
    }
