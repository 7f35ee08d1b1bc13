"""Transducer output lattice and its alignment-marginalizing loss."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.utils.errors import ContractError

BLANK = 0


@dataclass
class LatticeOutput:
    """Joiner log-probabilities over a T x (U+1) x V lattice.

    Node ``(t, u)`` is the distribution after ``t`` encoder frames and ``u``
    emitted labels. The blank symbol lives at index :data:`BLANK`.
    """

    log_probs: Tensor
    blank: int = BLANK

    def __post_init__(self):
        if self.log_probs.ndim != 3:
            raise ContractError(f"lattice must be T x (U+1) x V, got shape {self.log_probs.shape}")

    @property
    def T(self) -> int:
        return self.log_probs.shape[0]

    @property
    def U(self) -> int:
        return self.log_probs.shape[1] - 1

    @property
    def V(self) -> int:
        return self.log_probs.shape[2]

    def is_normalized(self, tol: float = 1e-10) -> bool:
        """Every node's exponentials sum to one within ``tol``."""
        sums = np.exp(self.log_probs.data).sum(axis=-1)
        return bool(np.all(np.abs(sums - 1.0) <= tol))


def _validate_target(lattice: LatticeOutput, target: Sequence[int]) -> np.ndarray:
    if lattice.T < 1:
        raise ContractError("lattice has no encoder frames (T = 0)")
    y = np.asarray(list(target), dtype=np.int64)
    if y.size != lattice.U:
        raise ContractError(f"target length {y.size} does not match lattice U = {lattice.U}")
    if y.size and (y.min() < 0 or y.max() >= lattice.V or np.any(y == lattice.blank)):
        raise ContractError(f"target ids must be non-blank ids below V = {lattice.V}: {y.tolist()}")
    return y


def transducer_loss(lattice: LatticeOutput, target: Sequence[int]) -> Tensor:
    """Negative log-likelihood of ``target`` summed over all blank/emit alignments.

    The forward variables are computed one anti-diagonal ``t + u = n`` at a
    time. Each diagonal is a length-T vector indexed by ``t`` whose cells
    outside the lattice hold ``-inf``, so every step is a handful of
    vectorized tape operations and the gradient comes from the tape.

    Args:
        lattice: Joiner output for one utterance
        target: Reference label ids (no blank), length ``lattice.U``

    Returns:
        Scalar loss tensor

    Raises:
        ContractError: On empty lattices or invalid targets
    """
    y = _validate_target(lattice, target)
    lp = lattice.log_probs
    T, U = lattice.T, lattice.U
    t_idx = np.arange(T)
    neg_inf = np.full(1, -np.inf)

    alpha = Tensor(np.where(t_idx == 0, 0.0, -np.inf))
    for n in range(1, T + U):
        # Source cells sit on diagonal n-1 at (t, n-1-t).
        u_src = n - 1 - t_idx
        valid_blank = (u_src >= 0) & (u_src <= U)
        valid_emit = (u_src >= 0) & (u_src <= U - 1)
        u_clip = np.clip(u_src, 0, U)

        blank_lp = ops.gather(lp, (t_idx, u_clip, np.full(T, lattice.blank)))
        from_blank = ops.add(ops.add(alpha, blank_lp), np.where(valid_blank, 0.0, -np.inf))
        if T > 1:
            from_blank = ops.concat([neg_inf, ops.slice(from_blank, 0, 0, T - 1)])
        else:
            from_blank = Tensor(neg_inf)

        if U > 0:
            labels = y[np.clip(u_src, 0, U - 1)]
            emit_lp = ops.gather(lp, (t_idx, u_clip, labels))
            from_emit = ops.add(ops.add(alpha, emit_lp), np.where(valid_emit, 0.0, -np.inf))
            alpha = ops.logaddexp(from_blank, from_emit)
        else:
            alpha = from_blank

    final = ops.add(
        ops.gather(alpha, (np.array([T - 1]),)),
        ops.gather(lp, (np.array([T - 1]), np.array([U]), np.array([lattice.blank]))),
    )
    return ops.neg(ops.sum(final))


def lattice_posteriors(lattice: LatticeOutput) -> Tensor:
    """Per-node probabilities ``exp(log_probs)``."""
    return ops.exp(lattice.log_probs)
