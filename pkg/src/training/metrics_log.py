"""Append-only line-delimited metrics records."""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

METRICS_FORMAT = "todm-metrics/1"


@dataclass
class PassMetrics:
    """One subnetwork forward/backward pass within a training step."""

    role: str
    config: str
    n_utterances: int
    rnnt_loss: float
    kd_loss: float
    grad_norm: float
    flops: int


@dataclass
class StepMetrics:
    """Everything measured during one optimizer step."""

    run: str
    mode: str
    kd_mode: str
    epoch: int
    step: int
    global_step: int
    lr: float
    kd_weight: float
    optimizer: str
    passes: List[PassMetrics] = field(default_factory=list)
    grad_norm: float = 0.0
    flops: int = 0
    wall_clock: float = 0.0
    aborted: bool = False
    error: Optional[str] = None

    @property
    def n_passes(self) -> int:
        return len(self.passes)

    def is_finite(self) -> bool:
        values = [self.grad_norm] + [v for p in self.passes for v in (p.rnnt_loss, p.kd_loss, p.grad_norm)]
        return all(math.isfinite(v) for v in values)

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record["format"] = METRICS_FORMAT
        record["n_passes"] = self.n_passes
        return record


def _clean(value: Any) -> Any:
    """Non-finite floats become null so every line stays valid JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


class MetricsLog:
    """A JSON-lines file of records carrying an ``epoch`` field."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def append(self, record: Dict[str, Any]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as f:
            f.write(json.dumps(_clean(record), sort_keys=True) + "\n")

    def __iter__(self) -> Iterator[Dict[str, Any]]:
        if not self.path.exists():
            return iter(())
        with open(self.path, "r") as f:
            return iter([json.loads(line) for line in f if line.strip()])

    def read(self) -> List[Dict[str, Any]]:
        return list(self)

    def reset(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def truncate_to_epoch(self, first_dropped_epoch: int) -> int:
        """Drop records of ``first_dropped_epoch`` and later; returns records kept."""
        kept = [r for r in self.read() if r.get("epoch", -1) < first_dropped_epoch]
        self.reset()
        for record in kept:
            self.append(record)
        return len(kept)
