"""On-disk corpus layout.

    <corpus_dir>/corpus.json           format tag, generator parameters, split sizes, hash
    <corpus_dir>/embeddings.f64        (V, d_in) float64 token emission table
    <corpus_dir>/<split>/features.f64  all frames of the split, row-major float64
    <corpus_dir>/<split>/manifest.jsonl  one record per utterance: id, num_frames, offset, tokens
"""

import hashlib
import json
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import polars as pl

from src.data.synth import SPLITS, Corpus, Utterance
from src.utils.config import Config, get_config
from src.utils.errors import CheckpointError, ContractError
from src.utils.logger import LoggerMixin, print_success

CORPUS_FORMAT = "todm-corpus/1"
MANIFEST_SCHEMA = {
    "id": pl.Utf8,
    "num_frames": pl.Int64,
    "offset": pl.Int64,
    "tokens": pl.List(pl.Int64),
}


def corpus_hash(directory: Union[str, Path]) -> str:
    """SHA-256 over the embedding table, every split's features and manifest."""
    directory = Path(directory)
    digest = hashlib.sha256()
    files = [directory / "embeddings.f64"]
    for split in SPLITS:
        files += [directory / split / "manifest.jsonl", directory / split / "features.f64"]
    for path in files:
        digest.update(path.relative_to(directory).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


class CorpusStore(LoggerMixin):
    """Save and load corpora under ``paths.corpus_dir``."""

    def __init__(self, config: Optional[Config] = None, directory: Optional[Union[str, Path]] = None):
        """Initialize store.

        Args:
            config: Configuration object (uses global config if None)
            directory: Corpus directory (defaults to ``paths.corpus_dir``)
        """
        self.config = config or get_config()
        self.directory = Path(directory) if directory is not None else self.config.paths.corpus_dir

    @property
    def meta_file(self) -> Path:
        return self.directory / "corpus.json"

    def exists(self) -> bool:
        return self.meta_file.exists()

    def save(self, corpus: Corpus) -> str:
        """Write ``corpus``; creates the directory if needed.

        Returns:
            The corpus hash
        """
        self.directory.mkdir(parents=True, exist_ok=True)
        corpus.embeddings.astype("<f8").tofile(self.directory / "embeddings.f64")

        for split in SPLITS:
            split_dir = self.directory / split
            split_dir.mkdir(parents=True, exist_ok=True)
            utterances = corpus.splits.get(split, [])
            offsets = np.cumsum([0] + [u.num_frames for u in utterances])[:-1]
            manifest = pl.DataFrame(
                {
                    "id": [u.id for u in utterances],
                    "num_frames": [u.num_frames for u in utterances],
                    "offset": [int(o) for o in offsets],
                    "tokens": [list(u.tokens) for u in utterances],
                },
                schema=MANIFEST_SCHEMA,
            )
            manifest.write_ndjson(split_dir / "manifest.jsonl")
            features = (
                np.concatenate([u.features for u in utterances], axis=0)
                if utterances
                else np.zeros((0, corpus.embeddings.shape[1]))
            )
            features.astype("<f8").tofile(split_dir / "features.f64")
            self.logger.debug(f"Wrote {len(utterances)} {split} utterances to {split_dir}")

        digest = corpus_hash(self.directory)
        meta = {
            "format": CORPUS_FORMAT,
            "params": corpus.params,
            "splits": {split: len(corpus.splits.get(split, [])) for split in SPLITS},
            "embedding_shape": list(corpus.embeddings.shape),
            "hash": digest,
            "created_at": datetime.now().isoformat(),
        }
        with open(self.meta_file, "w") as f:
            json.dump(meta, f, indent=2)
        print_success(f"Corpus saved to {self.directory} (hash {digest[:12]})")
        return digest

    def load_meta(self) -> Dict:
        if not self.exists():
            raise CheckpointError(f"no corpus found at {self.directory}; run the synth command first")
        with open(self.meta_file, "r") as f:
            meta = json.load(f)
        if meta.get("format") != CORPUS_FORMAT:
            raise CheckpointError(f"{self.meta_file} has format {meta.get('format')!r}")
        return meta

    def load(self, splits: Optional[List[str]] = None) -> Corpus:
        """Read the corpus (all splits, or only ``splits``).

        Raises:
            CheckpointError: If the corpus is missing or malformed
            ContractError: If an unknown split is requested
        """
        meta = self.load_meta()
        wanted = list(splits) if splits is not None else list(SPLITS)
        for split in wanted:
            if split not in SPLITS:
                raise ContractError(f"unknown split {split!r}; expected one of {list(SPLITS)}")

        v, d_in = meta["embedding_shape"]
        embeddings = np.fromfile(self.directory / "embeddings.f64", dtype="<f8").reshape(v, d_in)
        loaded: Dict[str, List[Utterance]] = {}
        for split in wanted:
            loaded[split] = self._load_split(split, d_in, meta["splits"][split])
        self.logger.info(
            f"Loaded corpus from {self.directory}: "
            + ", ".join(f"{k}={len(u)}" for k, u in loaded.items())
        )
        return Corpus(splits=loaded, embeddings=embeddings, params=meta.get("params", {}))

    def _load_split(self, split: str, d_in: int, count: int) -> List[Utterance]:
        if count == 0:
            return []
        split_dir = self.directory / split
        try:
            manifest = pl.read_ndjson(split_dir / "manifest.jsonl", schema=MANIFEST_SCHEMA)
            frames = np.fromfile(split_dir / "features.f64", dtype="<f8").reshape(-1, d_in)
        except (OSError, ValueError, pl.exceptions.ComputeError) as exc:
            raise CheckpointError(f"corrupt {split} split in {self.directory}: {exc}") from exc
        utterances = []
        for row in manifest.iter_rows(named=True):
            start, length = row["offset"], row["num_frames"]
            utterances.append(
                Utterance(row["id"], frames[start : start + length], tuple(row["tokens"]))
            )
        return utterances
