"""KL and adaptive alpha divergences between bucketed distributions.

The teacher side ``p`` is always a constant array; the student side ``q`` is a
Tensor so gradients reach the student only. Both are floored at ``EPS``
before logs and ratios.

For the alpha family the density ratio ``r = q / p`` is clamped to
``[1/beta, beta]`` and each bucket contributes ``p * f_alpha(r)`` with

    f_alpha(r) = (r**(1 - alpha) - 1 - (1 - alpha) * (r - 1)) / (alpha * (alpha - 1))

The linear term integrates to zero for normalized, unclamped inputs, so the
sum equals the usual alpha divergence there, and keeps every bucket's term
non-negative once clamping is active. ``alpha = 1`` is the KL limit
``r - 1 - log r`` and ``alpha = 0`` the reverse limit ``r log r - r + 1``.
"""

from typing import Union

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.distillation.buckets import BucketedDistribution
from src.utils.errors import ContractError, DimensionError

EPS = 1e-8

Student = Union[Tensor, np.ndarray]


def _student(q: Student) -> Tensor:
    return q if isinstance(q, Tensor) else Tensor(q)


def _teacher(p) -> np.ndarray:
    return p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)


def kld_nodes(p: np.ndarray, q: Student) -> Tensor:
    """Per-node ``sum p * (log p - log q)`` over the last axis."""
    p, q = _teacher(p), _student(q)
    if p.shape != q.shape:
        raise DimensionError("kld", p.shape, q.shape)
    log_p = np.log(np.maximum(p, EPS))
    log_q = ops.log(ops.clamp(q, low=EPS))
    terms = ops.mul(ops.neg(ops.sub(log_q, log_p)), p)
    return ops.sum(terms, axis=-1)


def _f_alpha(r: Tensor, alpha: float) -> Tensor:
    if np.isclose(alpha, 1.0, rtol=0.0, atol=1e-12):
        return ops.sub(ops.add_scalar(r, -1.0), ops.log(r))
    if np.isclose(alpha, 0.0, rtol=0.0, atol=1e-12):
        return ops.add_scalar(ops.sub(ops.mul(r, ops.log(r)), r), 1.0)
    power = ops.pow_scalar(r, 1.0 - alpha)
    numerator = ops.sub(ops.add_scalar(power, -1.0), ops.scale(ops.add_scalar(r, -1.0), 1.0 - alpha))
    return ops.scale(numerator, 1.0 / (alpha * (alpha - 1.0)))


def alpha_nodes(p: np.ndarray, q: Student, alpha: float, beta: float = 5.0) -> Tensor:
    """Per-node alpha divergence ``sum p * f_alpha(clamp(q / p))``."""
    p, q = _teacher(p), _student(q)
    if p.shape != q.shape:
        raise DimensionError("alpha_divergence", p.shape, q.shape)
    if beta <= 1.0:
        raise ContractError(f"ratio clamp beta must exceed 1, got {beta}")
    p_floor = np.maximum(p, EPS)
    ratio = ops.clamp(ops.mul(ops.clamp(q, low=EPS), 1.0 / p_floor), low=1.0 / beta, high=beta)
    return ops.sum(ops.mul(_f_alpha(ratio, alpha), p), axis=-1)


def adaptive_alpha_nodes(
    p: np.ndarray, q: Student, alpha_minus: float = -1.0, alpha_plus: float = 1.0, beta: float = 5.0
) -> Tensor:
    """Per-node ``max(D_alpha_minus, D_alpha_plus)``."""
    return ops.maximum(alpha_nodes(p, q, alpha_minus, beta), alpha_nodes(p, q, alpha_plus, beta))


def _matching(p: BucketedDistribution, q: BucketedDistribution) -> None:
    if p.token_ids.shape != q.token_ids.shape or not np.array_equal(p.token_ids, q.token_ids):
        raise ContractError("teacher and student buckets are defined on different token ids")


def kld(p: BucketedDistribution, q: BucketedDistribution) -> Tensor:
    """KL(p || q) summed over nodes, differentiable in the student ``q`` only.

    Raises:
        ContractError: If the buckets are not aligned
    """
    _matching(p, q)
    return ops.sum(kld_nodes(p.values, _student(q.probs)))


def alpha_divergence(
    p: BucketedDistribution,
    q: BucketedDistribution,
    alpha_minus: float = -1.0,
    alpha_plus: float = 1.0,
    beta: float = 5.0,
) -> Tensor:
    """Adaptive alpha divergence summed over nodes.

    Raises:
        ContractError: If the buckets are not aligned
    """
    _matching(p, q)
    return ops.sum(adaptive_alpha_nodes(p.values, _student(q.probs), alpha_minus, alpha_plus, beta))
