"""Size-vs-WER Pareto entries, filtering and front files."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import polars as pl

from src.supernet.search_space import SubnetworkConfig, parse_config_key
from src.utils.errors import CheckpointError

FRONT_FORMAT = "todm-front/1"


@dataclass(frozen=True)
class ParetoEntry:
    """One evaluated subnetwork."""

    config: SubnetworkConfig
    size_bytes: int
    wer: float
    decoder: str = "greedy"
    seed: Optional[int] = None

    def dominates(self, other: "ParetoEntry") -> bool:
        no_worse = self.size_bytes <= other.size_bytes and self.wer <= other.wer
        better = self.size_bytes < other.size_bytes or self.wer < other.wer
        return no_worse and better

    def to_record(self) -> Dict[str, Any]:
        return {
            "config": self.config.key(),
            "dropped_top_layers": self.config.dropped_top_layers,
            "channels": list(self.config.channels),
            "size_bytes": self.size_bytes,
            "wer": self.wer,
            "decoder": self.decoder,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "ParetoEntry":
        return cls(
            config=parse_config_key(record["config"]),
            size_bytes=int(record["size_bytes"]),
            wer=float(record["wer"]),
            decoder=record.get("decoder", "greedy"),
            seed=record.get("seed"),
        )


def pareto_filter(entries: Sequence[ParetoEntry]) -> List[ParetoEntry]:
    """Entries no other entry dominates, by size ascending (stable).

    Sweeps size groups in ascending order: an entry survives when its WER is
    the lowest of its size group and strictly below every smaller entry's.
    """
    ordered = sorted(entries, key=lambda e: e.size_bytes)
    kept: List[ParetoEntry] = []
    best_smaller = float("inf")
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].size_bytes == ordered[i].size_bytes:
            j += 1
        group = ordered[i:j]
        group_best = min(e.wer for e in group)
        if group_best < best_smaller:
            kept.extend(e for e in group if e.wer == group_best)
        best_smaller = min(best_smaller, group_best)
        i = j
    return kept


def write_front(
    entries: Sequence[ParetoEntry],
    path: Union[str, Path],
    details: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a JSON front file and its CSV twin (same stem, ``.csv``).

    Args:
        entries: Entries to export, in order
        path: JSON destination
        details: Extra top-level fields (constraints, winners, checkpoint)

    Returns:
        Path of the JSON file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format": FRONT_FORMAT,
        **(details or {}),
        "entries": [e.to_record() for e in entries],
    }
    with open(path, "w") as f:
        json.dump(document, f, indent=2)
    front_table(entries).write_csv(path.with_suffix(".csv"))
    return path


def front_table(entries: Sequence[ParetoEntry]) -> pl.DataFrame:
    """Flat size/WER table for plotting."""
    return pl.DataFrame(
        {
            "config": [e.config.key() for e in entries],
            "n_layers": [e.config.n_layers for e in entries],
            "size_bytes": [e.size_bytes for e in entries],
            "size_mb": [e.size_bytes / 1e6 for e in entries],
            "wer": [e.wer for e in entries],
            "decoder": [e.decoder for e in entries],
            "seed": [e.seed for e in entries],
        },
        schema={
            "config": pl.Utf8,
            "n_layers": pl.Int64,
            "size_bytes": pl.Int64,
            "size_mb": pl.Float64,
            "wer": pl.Float64,
            "decoder": pl.Utf8,
            "seed": pl.Int64,
        },
    )


def read_front(path: Union[str, Path]) -> List[ParetoEntry]:
    """Entries of a front file written by :func:`write_front`.

    Raises:
        CheckpointError: If the file is missing or not a front file
    """
    path = Path(path)
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable front file {path}: {exc}") from exc
    if document.get("format") != FRONT_FORMAT:
        raise CheckpointError(f"{path} has format {document.get('format')!r}, expected {FRONT_FORMAT!r}")
    return [ParetoEntry.from_record(r) for r in document.get("entries", [])]
