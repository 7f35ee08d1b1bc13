"""Run manifest tracking configs, seeds and produced artifacts of a run directory."""

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, ValidationError

from src.utils.config import Config, get_config
from src.utils.errors import CheckpointError
from src.utils.logger import LoggerMixin, print_warning

MANIFEST_FORMAT = "todm-run/1"


class ArtifactRecord(BaseModel):
    """One file produced by a command."""

    path: str
    kind: str
    details: Dict[str, Any] = Field(default_factory=dict)
    recorded_at: str = Field(default_factory=lambda: datetime.now().isoformat())


class RunManifest(BaseModel):
    """Config snapshot, seeds and artifacts of one run."""

    format: str = MANIFEST_FORMAT
    created_at: str = Field(default_factory=lambda: datetime.now().isoformat())
    last_updated: Optional[str] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    artifacts: Dict[str, ArtifactRecord] = Field(default_factory=dict)
    commands: List[Dict[str, Any]] = Field(default_factory=list)


class RunManifestStore(LoggerMixin):
    """Read and update ``run_manifest.json`` inside a run directory."""

    def __init__(self, run_dir: Path, config: Optional[Config] = None):
        """Initialize manifest store.

        Args:
            run_dir: Directory of the run
            config: Configuration object (uses global config if None)
        """
        self.config = config or get_config()
        self.run_dir = Path(run_dir)
        self.manifest_file = self.run_dir / "run_manifest.json"

    def load(self) -> RunManifest:
        return self._load_manifest()

    def snapshot_config(self, config: Optional[Config] = None) -> None:
        """Record the full configuration and the seeds it implies."""
        config = config or self.config
        manifest = self._load_manifest()
        manifest.config = config.to_dict()
        manifest.seeds = {
            "corpus": config.corpus.seed,
            "init": config.model.init_seed,
            "train": config.train.seed,
            "search": config.search.seed,
        }
        self._save_manifest(manifest)

    def record_artifact(self, name: str, path: Path, kind: str, details: Optional[Dict[str, Any]] = None) -> None:
        """Register (or replace) an artifact under ``name``.

        Args:
            name: Unique artifact name, e.g. ``checkpoint/epoch_003``
            path: File path
            kind: Artifact category (checkpoint, metrics, front, ...)
            details: Extra JSON-serializable information
        """
        manifest = self._load_manifest()
        try:
            relative = str(Path(path).resolve().relative_to(self.run_dir.resolve()))
        except ValueError:
            relative = str(path)
        manifest.artifacts[name] = ArtifactRecord(path=relative, kind=kind, details=details or {})
        self._save_manifest(manifest)
        self.logger.debug(f"Recorded artifact {name} -> {relative}")

    def record_command(self, command: str, arguments: Dict[str, Any]) -> None:
        manifest = self._load_manifest()
        manifest.commands.append(
            {"command": command, "arguments": arguments, "at": datetime.now().isoformat()}
        )
        self._save_manifest(manifest)

    def artifacts_of_kind(self, kind: str) -> Dict[str, ArtifactRecord]:
        return {k: a for k, a in self._load_manifest().artifacts.items() if a.kind == kind}

    def drop_artifacts(self, prefix: str) -> None:
        """Forget artifacts whose name starts with ``prefix``; a resume drops later checkpoints."""
        manifest = self._load_manifest()
        removed = [k for k in manifest.artifacts if k.startswith(prefix)]
        for key in removed:
            del manifest.artifacts[key]
        if removed:
            self._save_manifest(manifest)

    def missing_artifacts(self) -> List[str]:
        """Names of artifacts whose file no longer exists."""
        manifest = self._load_manifest()
        missing = []
        for name, record in manifest.artifacts.items():
            path = Path(record.path)
            if not path.is_absolute():
                path = self.run_dir / path
            if not path.exists():
                missing.append(name)
        if missing:
            print_warning(f"{len(missing)} artifact(s) listed in {self.manifest_file} are missing")
        return missing

    def _load_manifest(self) -> RunManifest:
        if not self.manifest_file.exists():
            return RunManifest()
        try:
            with open(self.manifest_file, "r") as f:
                manifest = RunManifest.model_validate(json.load(f))
        except (OSError, json.JSONDecodeError, ValidationError) as exc:
            raise CheckpointError(f"unreadable run manifest {self.manifest_file}: {exc}") from exc
        if manifest.format != MANIFEST_FORMAT:
            raise CheckpointError(f"{self.manifest_file} has format {manifest.format!r}")
        return manifest

    def _save_manifest(self, manifest: RunManifest) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        manifest.last_updated = datetime.now().isoformat()
        with open(self.manifest_file, "w") as f:
            json.dump(manifest.model_dump(mode="json"), f, indent=2)
