"""Wall-clock and memory profile of pipeline stages (synth, train, search, eval)."""

import json
import os
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import psutil

from src.utils.config import Config, get_config
from src.utils.logger import LoggerMixin, console, print_success, print_table

_MB = 1024**2


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / _MB


@dataclass
class StageTiming:
    """One profiled stage; ``duration`` is measured with ``perf_counter``."""

    name: str
    metadata: Dict[str, Any] = field(default_factory=dict)
    started_at: str = field(default_factory=lambda: datetime.now().isoformat())
    duration: Optional[float] = None
    rss_start_mb: float = field(default_factory=_rss_mb)
    rss_end_mb: Optional[float] = None
    _clock: float = field(default_factory=time.perf_counter, repr=False)

    @property
    def finished(self) -> bool:
        return self.duration is not None

    def stop(self) -> float:
        """Stop the stage clock and sample memory.

        Returns:
            Duration in seconds
        """
        self.duration = time.perf_counter() - self._clock
        self.rss_end_mb = _rss_mb()
        return self.duration

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "started_at": self.started_at,
            "duration_seconds": self.duration,
            "rss_start_mb": round(self.rss_start_mb, 2),
            "rss_end_mb": round(self.rss_end_mb, 2) if self.rss_end_mb is not None else None,
            "metadata": self.metadata,
        }


@dataclass
class PipelineProfile:
    """Every stage of one pipeline invocation plus host and run facts."""

    run_id: str
    stages: Dict[str, StageTiming] = field(default_factory=dict)
    host: Dict[str, Any] = field(default_factory=dict)
    run_info: Dict[str, Any] = field(default_factory=dict)

    def summary(self) -> dict:
        done = [s for s in self.stages.values() if s.finished]
        return {
            "total_duration_seconds": sum(s.duration for s in done),
            "stage_count": len(self.stages),
            "completed_stages": len(done),
            "peak_rss_mb": max((s.rss_end_mb for s in done), default=None),
            "failed_stages": [s.name for s in done if s.metadata.get("failed")],
        }

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "host": self.host,
            "stages": [stage.to_dict() for stage in self.stages.values()],
            "run_info": self.run_info,
            "summary": self.summary(),
        }


class BenchmarkTracker(LoggerMixin):
    """Profile pipeline stages and save a JSON report under ``paths.benchmark_dir``."""

    def __init__(self, config: Optional[Config] = None):
        """Initialize the tracker.

        Args:
            config: Configuration object (uses global config if None)
        """
        self.config = config or get_config()
        self.run_id = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.result = PipelineProfile(run_id=self.run_id, host=self._host_info())

    def start_stage(self, name: str, metadata: Optional[Dict[str, Any]] = None) -> None:
        self.logger.info(f"Starting stage: {name}")
        self.result.stages[name] = StageTiming(name=name, metadata=dict(metadata or {}))

    def stop_stage(self, name: str, metadata: Optional[Dict[str, Any]] = None) -> float:
        """Stop a stage, merging ``metadata`` into what it started with.

        Returns:
            Duration in seconds (0.0 if the stage was never started)
        """
        stage = self.result.stages.get(name)
        if stage is None:
            self.logger.warning(f"Stage {name} was not started")
            return 0.0
        duration = stage.stop()
        stage.metadata.update(metadata or {})
        self.logger.info(f"Completed stage: {name} ({format_duration(duration)})")
        return duration

    def record_run_info(self, key: str, value: Any) -> None:
        self.result.run_info[key] = value

    def stage_ratio(self, numerator: str, denominator: str) -> Optional[float]:
        """Duration of one stage as a fraction of another's, e.g. search over train."""
        top = self.result.stages.get(numerator)
        bottom = self.result.stages.get(denominator)
        if top is None or bottom is None or not top.duration or not bottom.duration:
            return None
        return top.duration / bottom.duration

    def current_rss_mb(self) -> float:
        return _rss_mb()

    def _host_info(self) -> dict:
        memory = psutil.virtual_memory()
        return {
            "cpu_count": psutil.cpu_count(),
            "memory_total": format_bytes(memory.total),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "omp_num_threads": os.environ.get("OMP_NUM_THREADS"),
        }

    def save_results(self, output_path: Optional[Path] = None) -> Path:
        """Write the profile as JSON.

        Args:
            output_path: Destination (``pipeline_<run_id>.json`` in the benchmark dir if None)

        Returns:
            Path written
        """
        if output_path is None:
            output_path = self.config.paths.benchmark_dir / f"pipeline_{self.run_id}.json"
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w") as f:
            json.dump(self.result.to_dict(), f, indent=2, default=str)
        self.logger.info(f"Saved pipeline profile to {output_path}")
        print_success(f"Benchmark results saved to {output_path.name}")
        return output_path

    def print_summary(self) -> None:
        rows = []
        for name, stage in self.result.stages.items():
            if not stage.finished:
                continue
            details = ", ".join(f"{k}={v}" for k, v in stage.metadata.items()) or "-"
            rows.append((name, format_duration(stage.duration), f"{stage.rss_end_mb:.1f}", details))
        print_table("Pipeline stages", ["Stage", "Duration", "RSS (MB)", "Details"], rows)
        summary = self.result.summary()
        console.print(f"[bold]Total:[/bold] {format_duration(summary['total_duration_seconds'])}")
        for key, value in self.result.run_info.items():
            console.print(f"  {key}: {value}")


class BenchmarkContext:
    """``with`` block profiling one stage; an exception marks the stage failed."""

    def __init__(self, tracker: BenchmarkTracker, name: str, metadata: Optional[Dict[str, Any]] = None):
        self.tracker = tracker
        self.name = name
        self.metadata = metadata or {}

    def __enter__(self) -> "BenchmarkContext":
        self.tracker.start_stage(self.name, self.metadata)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        extra = {"failed": True, "error": str(exc_val)} if exc_type is not None else None
        self.tracker.stop_stage(self.name, extra)


def format_bytes(n_bytes: float) -> str:
    """Human-readable size, e.g. ``1.50 KB``."""
    value = float(n_bytes)
    for unit in ("B", "KB", "MB", "GB", "TB"):
        if value < 1024.0:
            return f"{value:.2f} {unit}"
        value /= 1024.0
    return f"{value:.2f} PB"


def format_duration(seconds: float) -> str:
    """Human-readable duration, e.g. ``2m 30s``."""
    if seconds < 60:
        return f"{seconds:.2f}s"
    minutes, rest = divmod(seconds, 60)
    if minutes < 60:
        return f"{int(minutes)}m {rest:.0f}s"
    hours, minutes = divmod(int(minutes), 60)
    return f"{hours}h {minutes}m"
