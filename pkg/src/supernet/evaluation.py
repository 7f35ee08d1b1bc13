"""Decode utterance sets with a Supernet subnetwork or an extracted model and score WER."""

import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

from src.autodiff.tensor import no_grad
from src.data.synth import Utterance
from src.supernet.model import SubnetworkModel, SupernetModel
from src.supernet.search_space import SubnetworkConfig
from src.transducer.decoding import Hypothesis, beam_decode, greedy_decode
from src.transducer.metrics import word_error_rate
from src.utils.errors import ContractError

_BEAM = re.compile(r"^beam(\d+)$")


@dataclass
class DecodeReport:
    """Corpus WER plus the individual hypotheses."""

    wer: float
    decoder: str
    hypotheses: List[Hypothesis] = field(default_factory=list, repr=False)

    @property
    def n_utterances(self) -> int:
        return len(self.hypotheses)


def parse_decoder(name: str, beam_size: int = 5) -> Tuple[str, int]:
    """``greedy`` or ``beam<N>`` to (kind, width). ``beam5`` uses ``beam_size`` when given."""
    if name == "greedy":
        return "greedy", 1
    match = _BEAM.match(name)
    if match is None:
        raise ContractError(f"unknown decoder {name!r}; use greedy or beam<N>")
    return "beam", beam_size if name == "beam5" else int(match.group(1))


def decode_utterances(
    model: Union[SupernetModel, SubnetworkModel],
    utterances: Sequence[Utterance],
    cfg: Optional[SubnetworkConfig] = None,
    decoder: str = "greedy",
    beam_size: int = 5,
    max_symbols_per_frame: int = 3,
) -> DecodeReport:
    """Decode every utterance without recording any gradient.

    Args:
        model: Supernet (``cfg`` required) or an extracted subnetwork
        utterances: Non-empty evaluation set
        cfg: Subnetwork of the Supernet to run
        decoder: ``greedy`` or ``beam<N>``
        beam_size: Width used for ``beam5``
        max_symbols_per_frame: Emission cap per frame

    Returns:
        DecodeReport with corpus-level WER

    Raises:
        ContractError: On an empty set, a missing config or an unknown decoder
    """
    if not utterances:
        raise ContractError("evaluation set is empty")
    kind, width = parse_decoder(decoder, beam_size)
    if isinstance(model, SupernetModel) and cfg is None:
        raise ContractError("a subnetwork config is required to decode with the Supernet")

    predictor = model.predictor_step()
    joiner = model.joiner_step()
    hypotheses = []
    with no_grad():
        for utt in utterances:
            if isinstance(model, SupernetModel):
                states = model.encoder_states(cfg, utt.features)
            else:
                states = model.encoder_states(utt.features)
            if kind == "greedy":
                hyp = greedy_decode(states, predictor, joiner, max_symbols_per_frame)
            else:
                hyp = beam_decode(states, predictor, joiner, width, max_symbols_per_frame)
            hypotheses.append(hyp)
    wer = word_error_rate([u.tokens for u in utterances], [h.tokens for h in hypotheses])
    return DecodeReport(wer=wer, decoder=decoder, hypotheses=hypotheses)
