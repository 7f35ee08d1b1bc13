"""Deterministic synthetic sequence-transduction corpus."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.utils.config import Config, CorpusConfig, get_config
from src.utils.errors import ContractError
from src.utils.logger import LoggerMixin, print_info, print_success

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Utterance:
    """One (features, reference labels) pair."""

    id: str
    features: np.ndarray = field(repr=False)
    tokens: Tuple[int, ...]

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])


@dataclass
class Corpus:
    """Train/dev/test splits plus the token emission table that generated them."""

    splits: Dict[str, List[Utterance]]
    embeddings: np.ndarray
    params: Dict[str, object] = field(default_factory=dict)

    def __getitem__(self, split: str) -> List[Utterance]:
        if split not in self.splits:
            raise ContractError(f"unknown split {split!r}; expected one of {sorted(self.splits)}")
        return self.splits[split]

    @property
    def train(self) -> List[Utterance]:
        return self["train"]

    @property
    def dev(self) -> List[Utterance]:
        return self["dev"]

    @property
    def test(self) -> List[Utterance]:
        return self["test"]


def _check_range(name: str, bounds: Tuple[int, int]) -> Tuple[int, int]:
    low, high = (int(b) for b in bounds)
    if low < 1 or high < low:
        raise ContractError(f"{name} must satisfy 1 <= low <= high, got {bounds}")
    return low, high


def generate_corpus(
    seed: int,
    n_utterances: Tuple[int, int, int],
    vocab_size: int,
    frames_per_token_range: Tuple[int, int],
    noise_std: float,
    d_in: int,
    tokens_per_utterance: Tuple[int, int] = (3, 8),
) -> Corpus:
    """Draw a corpus where each label emits a few noisy copies of its embedding.

    Token embeddings come from a unit Gaussian drawn once per seed. Every
    utterance samples its labels uniformly from ``1..V-1`` and each label
    emits ``k`` frames of ``embedding + N(0, noise_std^2)`` with ``k`` uniform
    in ``frames_per_token_range``. Splits use independent child seeds.

    Args:
        seed: Master seed
        n_utterances: Utterance counts for (train, dev, test)
        vocab_size: Vocabulary size including blank (>= 3)
        frames_per_token_range: Inclusive frame count range per label
        noise_std: Gaussian noise level (>= 0)
        d_in: Feature dimension
        tokens_per_utterance: Inclusive label count range per utterance

    Returns:
        Corpus with ids ``<split>-<index>``

    Raises:
        ContractError: On degenerate sizes or ranges
    """
    if vocab_size < 3:
        raise ContractError(f"vocab_size must be >= 3 (blank plus two labels), got {vocab_size}")
    if noise_std < 0:
        raise ContractError(f"noise_std must be non-negative, got {noise_std}")
    if d_in < 1:
        raise ContractError(f"d_in must be positive, got {d_in}")
    if len(n_utterances) != len(SPLITS) or any(n < 0 for n in n_utterances):
        raise ContractError(f"n_utterances must be three non-negative counts, got {n_utterances}")
    f_low, f_high = _check_range("frames_per_token_range", frames_per_token_range)
    t_low, t_high = _check_range("tokens_per_utterance", tokens_per_utterance)

    embed_seq, *split_seqs = np.random.SeedSequence(seed).spawn(1 + len(SPLITS))
    embeddings = np.random.default_rng(embed_seq).standard_normal((vocab_size, d_in))

    splits: Dict[str, List[Utterance]] = {}
    for split, count, seq in zip(SPLITS, n_utterances, split_seqs):
        rng = np.random.default_rng(seq)
        utterances = []
        for i in range(count):
            n_tokens = int(rng.integers(t_low, t_high + 1))
            tokens = rng.integers(1, vocab_size, size=n_tokens)
            repeats = rng.integers(f_low, f_high + 1, size=n_tokens)
            frames = np.repeat(embeddings[tokens], repeats, axis=0)
            frames = frames + noise_std * rng.standard_normal(frames.shape)
            utterances.append(Utterance(f"{split}-{i:05d}", frames, tuple(int(t) for t in tokens)))
        splits[split] = utterances

    params = {
        "seed": seed,
        "n_utterances": list(n_utterances),
        "vocab_size": vocab_size,
        "frames_per_token": [f_low, f_high],
        "tokens_per_utterance": [t_low, t_high],
        "noise_std": noise_std,
        "d_in": d_in,
    }
    return Corpus(splits=splits, embeddings=embeddings, params=params)


class CorpusGenerator(LoggerMixin):
    """Builds the corpus described by the ``corpus`` config section."""

    def __init__(self, config: Optional[Config] = None):
        """Initialize generator.

        Args:
            config: Configuration object (uses global config if None)
        """
        self.config = config or get_config()
        self.corpus_config: CorpusConfig = self.config.corpus

    def generate(self) -> Corpus:
        cfg = self.corpus_config
        self.logger.info(
            f"Generating corpus seed={cfg.seed} V={cfg.vocab_size} d_in={cfg.d_in} noise={cfg.noise_std}"
        )
        print_info(f"Synthesizing {cfg.n_train}/{cfg.n_dev}/{cfg.n_test} train/dev/test utterances...")
        corpus = generate_corpus(
            seed=cfg.seed,
            n_utterances=(cfg.n_train, cfg.n_dev, cfg.n_test),
            vocab_size=cfg.vocab_size,
            frames_per_token_range=cfg.frames_per_token,
            noise_std=cfg.noise_std,
            d_in=cfg.d_in,
            tokens_per_utterance=cfg.tokens_per_utterance,
        )
        total_frames = sum(u.num_frames for split in corpus.splits.values() for u in split)
        print_success(f"Corpus ready: {total_frames:,} frames")
        return corpus
