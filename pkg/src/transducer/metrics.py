"""Word error rate over token sequences."""

from typing import Sequence

import editdistance

from src.utils.errors import ContractError


def edit_distance(ref: Sequence[int], hyp: Sequence[int]) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    return int(editdistance.eval(list(ref), list(hyp)))


def word_error_rate(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> float:
    """Corpus-level WER: total edit distance over total reference length.

    Raises:
        ContractError: If the lists differ in length or the references are all empty
    """
    if len(refs) != len(hyps):
        raise ContractError(f"{len(refs)} references but {len(hyps)} hypotheses")
    total_ref = 0
    errors = 0
    for ref, hyp in zip(refs, hyps):
        total_ref += len(ref)
        errors += edit_distance(ref, hyp)
    if total_ref == 0:
        raise ContractError("word error rate is undefined for zero reference tokens")
    return errors / total_ref
