"""Top-j bucketing of teacher and student lattice distributions."""

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.transducer.lattice import BLANK
from src.utils.errors import ContractError

Probs = Union[np.ndarray, Tensor]


@dataclass
class BucketedDistribution:
    """Mass on ``j`` selected tokens followed by one remainder bucket.

    ``probs`` has a trailing axis of length ``j + 1``; ``token_ids`` has the
    matching trailing axis of length ``j``. Both may carry a leading node axis.
    """

    probs: Probs
    token_ids: np.ndarray

    @property
    def j(self) -> int:
        return int(self.token_ids.shape[-1])

    @property
    def values(self) -> np.ndarray:
        return self.probs.data if isinstance(self.probs, Tensor) else np.asarray(self.probs)

    def n_floats(self) -> int:
        """Floats held by the bucketed probabilities."""
        return int(self.values.size)


def _check_j(j: int, vocab_size: int) -> None:
    if j < 2:
        raise ContractError(f"j must be at least 2 (blank and target), got {j}")
    if j >= vocab_size:
        raise ContractError(f"j must be smaller than the vocabulary ({vocab_size}), got {j}")


def select_token_ids(
    teacher_probs: np.ndarray, j: int, targets: np.ndarray, blank: int = BLANK
) -> np.ndarray:
    """Choose ``j`` token ids per node from the teacher distribution.

    Order is blank, then the target (unless it is blank), then the
    remaining tokens by descending teacher mass, ties to the lower id.

    Args:
        teacher_probs: (N, V) teacher probabilities
        j: Selected dimensions per node
        targets: (N,) target id per node
        blank: Blank id

    Returns:
        (N, j) integer ids
    """
    teacher_probs = np.atleast_2d(teacher_probs)
    _check_j(j, teacher_probs.shape[-1])
    rows = np.arange(teacher_probs.shape[0])
    priority = teacher_probs.copy()
    priority[rows, np.asarray(targets)] = 2.0
    priority[:, blank] = 3.0
    order = np.argsort(-priority, axis=-1, kind="stable")
    return order[:, :j]


def _bucket_from_selected(selected: Probs) -> Probs:
    if isinstance(selected, Tensor):
        remainder = ops.clamp(ops.add_scalar(ops.neg(ops.sum(selected, axis=1)), 1.0), low=0.0)
        return ops.concat([selected, ops.reshape(remainder, (selected.shape[0], 1))], axis=1)
    remainder = np.maximum(1.0 - selected.sum(axis=1), 0.0)
    return np.concatenate([selected, remainder[:, None]], axis=1)


def bucket_topj(
    teacher_node_probs: np.ndarray, j: int, target_token: int, blank: int = BLANK
) -> BucketedDistribution:
    """Bucket one teacher node distribution.

    Args:
        teacher_node_probs: Length-V distribution
        j: Number of kept tokens (2 <= j < V)
        target_token: Next reference label at this node (blank at the last label position)
        blank: Blank id

    Returns:
        Distribution over ``j + 1`` buckets

    Raises:
        ContractError: If ``j`` is out of range
    """
    probs = np.asarray(teacher_node_probs, dtype=np.float64)[None, :]
    ids = select_token_ids(probs, j, np.array([target_token]), blank)
    buckets = _bucket_from_selected(probs[0, ids[0]][None, :])
    return BucketedDistribution(buckets[0], ids[0])


def bucket_with_ids(probs: Probs, token_ids: np.ndarray) -> BucketedDistribution:
    """Bucket a distribution on ids chosen elsewhere (the teacher's).

    Args:
        probs: (V,) or (N, V) probabilities; a Tensor keeps the tape
        token_ids: (j,) or (N, j) ids
    """
    single = np.ndim(token_ids) == 1
    ids = np.atleast_2d(token_ids)
    if isinstance(probs, Tensor):
        table = probs if probs.ndim == 2 else ops.reshape(probs, (1, probs.shape[0]))
        rows = np.arange(ids.shape[0])[:, None]
        selected = ops.gather(table, (rows, ids))
    else:
        table = np.atleast_2d(probs)
        selected = table[np.arange(ids.shape[0])[:, None], ids]
    buckets = _bucket_from_selected(selected)
    if single:
        buckets = ops.reshape(buckets, (ids.shape[1] + 1,)) if isinstance(buckets, Tensor) else buckets[0]
        return BucketedDistribution(buckets, ids[0])
    return BucketedDistribution(buckets, ids)


def node_targets(T: int, target: Sequence[int], blank: int = BLANK) -> np.ndarray:
    """Target id of each of the ``T * (U + 1)`` nodes in row-major (t, u) order.

    Node (t, u) uses the next label ``target[u]``; the last label position uses blank.
    """
    per_u = np.append(np.asarray(list(target), dtype=np.int64), blank)
    return np.tile(per_u, T)


def bucketize_lattices(
    teacher_log_probs: np.ndarray,
    student_log_probs: Tensor,
    target: Sequence[int],
    j: int,
    blank: int = BLANK,
) -> Tuple[BucketedDistribution, BucketedDistribution]:
    """Bucket every node of a teacher/student lattice pair on the teacher's ids.

    Args:
        teacher_log_probs: (T, U+1, V) teacher log-probabilities (constant)
        student_log_probs: (T, U+1, V) student log-probabilities on the tape
        target: Reference labels
        j: Selected dimensions per node
        blank: Blank id

    Returns:
        (teacher buckets as arrays, student buckets as Tensors), each (N, j+1)
    """
    T, U1, V = teacher_log_probs.shape
    _check_j(j, V)
    n = T * U1
    teacher = np.exp(teacher_log_probs.reshape(n, V))
    ids = select_token_ids(teacher, j, node_targets(T, target, blank), blank)
    rows = np.arange(n)[:, None]
    teacher_buckets = _bucket_from_selected(teacher[rows, ids])
    student_selected = ops.exp(ops.gather(ops.reshape(student_log_probs, (n, V)), (rows, ids)))
    student_buckets = _bucket_from_selected(student_selected)
    return BucketedDistribution(teacher_buckets, ids), BucketedDistribution(student_buckets, ids)
