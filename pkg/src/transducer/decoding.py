"""Frame-synchronous greedy and beam decoding for transducer models."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Protocol, Tuple

import numpy as np

from src.transducer.lattice import BLANK
from src.utils.errors import ContractError


@dataclass(frozen=True)
class Hypothesis:
    """A decoded label sequence with its accumulated log-probability."""

    tokens: Tuple[int, ...]
    score: float


class Predictor(Protocol):
    """Label-conditioned state machine feeding the joiner."""

    def initial_state(self) -> Any: ...

    def step(self, token: int, state: Any) -> Tuple[np.ndarray, Any]: ...


class Joiner(Protocol):
    """Combines one encoder frame with one predictor output."""

    def log_probs(self, encoder_frame: np.ndarray, predictor_output: np.ndarray) -> np.ndarray: ...


@dataclass
class _Beam:
    tokens: Tuple[int, ...]
    score: float
    pred_out: np.ndarray = field(repr=False)
    state: Any = field(repr=False)


def greedy_decode(
    encoder_states: np.ndarray,
    predictor: Predictor,
    joiner: Joiner,
    max_symbols_per_frame: int = 3,
    blank: int = BLANK,
) -> Hypothesis:
    """Emit the argmax symbol at every lattice node until blank advances the frame.

    Ties resolve to the lowest index, so blank wins a tie. After
    ``max_symbols_per_frame`` emissions on one frame the blank transition is
    forced and its log-probability is added to the score.

    Args:
        encoder_states: (T, d) encoder outputs
        predictor: Predictor step object
        joiner: Joiner
        max_symbols_per_frame: Emission cap per frame (>= 1)
        blank: Blank id

    Returns:
        Best-path hypothesis (possibly empty)
    """
    if max_symbols_per_frame < 1:
        raise ContractError("max_symbols_per_frame must be >= 1")
    enc = np.asarray(encoder_states)
    pred_out, state = predictor.step(blank, predictor.initial_state())
    tokens: List[int] = []
    score = 0.0
    for t in range(enc.shape[0]):
        emitted = 0
        while True:
            lp = joiner.log_probs(enc[t], pred_out)
            k = blank if emitted >= max_symbols_per_frame else int(np.argmax(lp))
            score += float(lp[k])
            if k == blank:
                break
            tokens.append(k)
            pred_out, state = predictor.step(k, state)
            emitted += 1
    return Hypothesis(tuple(tokens), score)


def beam_decode(
    encoder_states: np.ndarray,
    predictor: Predictor,
    joiner: Joiner,
    beam: int = 5,
    max_symbols_per_frame: int = 3,
    blank: int = BLANK,
) -> Hypothesis:
    """Frame-synchronous beam search with merging of equal label sequences.

    At every expansion step each live hypothesis proposes its blank
    continuation and all label emissions; the ``beam`` best proposals
    survive. Surviving blank proposals finish the frame and merge by
    log-add-exp when their label sequences coincide; surviving emissions are
    expanded again. With ``beam = 1`` this is exactly :func:`greedy_decode`.

    Args:
        encoder_states: (T, d) encoder outputs
        predictor: Predictor step object
        joiner: Joiner
        beam: Beam width (>= 1)
        max_symbols_per_frame: Emission cap per frame (>= 1)
        blank: Blank id

    Returns:
        Highest-scoring hypothesis after the last frame
    """
    if beam < 1:
        raise ContractError("beam must be >= 1")
    if max_symbols_per_frame < 1:
        raise ContractError("max_symbols_per_frame must be >= 1")
    enc = np.asarray(encoder_states)
    cache: Dict[Tuple[int, ...], Tuple[np.ndarray, Any]] = {}

    def extend(parent: _Beam, token: int, score: float) -> _Beam:
        tokens = parent.tokens + (token,)
        if tokens not in cache:
            cache[tokens] = predictor.step(token, parent.state)
        pred_out, state = cache[tokens]
        return _Beam(tokens, score, pred_out, state)

    pred_out, state = predictor.step(blank, predictor.initial_state())
    hyps = [_Beam((), 0.0, pred_out, state)]

    for t in range(enc.shape[0]):
        finished: Dict[Tuple[int, ...], _Beam] = {}
        live = hyps
        for depth in range(max_symbols_per_frame + 1):
            proposals: List[Tuple[float, _Beam, int]] = []
            for hyp in live:
                lp = joiner.log_probs(enc[t], hyp.pred_out)
                proposals.append((hyp.score + float(lp[blank]), hyp, blank))
                if depth < max_symbols_per_frame:
                    proposals.extend(
                        (hyp.score + float(lp[k]), hyp, k) for k in range(len(lp)) if k != blank
                    )
            proposals.sort(key=lambda p: -p[0])
            if depth < max_symbols_per_frame:
                proposals = proposals[:beam]

            live = []
            for score, hyp, k in proposals:
                if k == blank:
                    done = finished.get(hyp.tokens)
                    if done is None:
                        finished[hyp.tokens] = _Beam(hyp.tokens, score, hyp.pred_out, hyp.state)
                    else:
                        done.score = float(np.logaddexp(done.score, score))
                else:
                    live.append(extend(hyp, k, score))
            if not live:
                break

        ranked = sorted(finished.values(), key=lambda h: -h.score)
        hyps = ranked[:beam]

    best = hyps[0]
    return Hypothesis(best.tokens, best.score)
