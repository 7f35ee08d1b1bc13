"""Sampled in-place distillation loss over transducer lattices."""

from typing import Literal, Sequence, Union

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.distillation.buckets import bucketize_lattices
from src.distillation.divergences import adaptive_alpha_nodes, kld_nodes
from src.transducer.lattice import LatticeOutput
from src.utils.errors import ContractError, DimensionError

KDMode = Literal["none", "kld", "alphaD"]


def kd_loss(
    teacher_lattice: Union[LatticeOutput, np.ndarray],
    student_lattice: LatticeOutput,
    target: Sequence[int],
    j: int,
    mode: KDMode = "alphaD",
    alpha_minus: float = -1.0,
    alpha_plus: float = 1.0,
    beta: float = 5.0,
) -> Tensor:
    """Mean node divergence between teacher and student lattices.

    The teacher is read as plain values, so no gradient ever reaches the
    parameters that produced it.

    Args:
        teacher_lattice: Teacher lattice or its (T, U+1, V) log-probabilities
        student_lattice: Student lattice on the current tape
        target: Reference labels of the utterance
        j: Selected token dimensions per node (plus one remainder bucket)
        mode: ``kld`` or ``alphaD``; ``none`` returns a constant zero
        alpha_minus: Negative alpha of the adaptive divergence
        alpha_plus: Positive alpha of the adaptive divergence
        beta: Ratio clamp of the alpha divergence

    Returns:
        Scalar loss tensor

    Raises:
        DimensionError: If the lattices differ in shape
        ContractError: On an unknown mode or out-of-range ``j``
    """
    teacher = (
        teacher_lattice.log_probs.data if isinstance(teacher_lattice, LatticeOutput) else np.asarray(teacher_lattice)
    )
    student = student_lattice.log_probs
    if teacher.shape != student.shape:
        raise DimensionError("kd_loss", teacher.shape, student.shape)
    if mode == "none":
        return Tensor(0.0)

    p, q = bucketize_lattices(teacher, student, target, j, blank=student_lattice.blank)
    if mode == "kld":
        per_node = kld_nodes(p.values, q.probs)
    elif mode == "alphaD":
        per_node = adaptive_alpha_nodes(p.values, q.probs, alpha_minus, alpha_plus, beta)
    else:
        raise ContractError(f"unknown distillation mode {mode!r}")
    return ops.mean(per_node)
