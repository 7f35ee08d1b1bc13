"""Tests for the run manifest, error hierarchy and logging helpers."""

import json
import logging

import pytest

from src.utils.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    NumericError,
    TODMError,
)
from src.utils.logger import get_logger, make_progress, setup_logging
from src.utils.run_manifest import MANIFEST_FORMAT, RunManifestStore


class TestRunManifestStore:
    def test_empty_manifest(self, tiny_config, tmp_path):
        manifest = RunManifestStore(tmp_path / "run", tiny_config).load()
        assert manifest.format == MANIFEST_FORMAT
        assert manifest.artifacts == {}

    def test_snapshot_records_seeds(self, tiny_config, tmp_path):
        store = RunManifestStore(tmp_path / "run", tiny_config)
        store.snapshot_config()
        manifest = store.load()
        assert manifest.seeds == {"corpus": 3, "init": 0, "train": 5, "search": 0}
        assert manifest.config["train"]["run_name"] == "tiny"

    def test_artifacts_are_relative(self, tiny_config, tmp_path):
        run_dir = tmp_path / "run"
        store = RunManifestStore(run_dir, tiny_config)
        target = run_dir / "checkpoints" / "epoch_000.npz"
        target.parent.mkdir(parents=True)
        target.write_bytes(b"x")
        store.record_artifact("checkpoint/epoch_000", target, "checkpoint", {"epoch": 0})
        record = store.load().artifacts["checkpoint/epoch_000"]
        assert record.path == "checkpoints/epoch_000.npz"
        assert store.missing_artifacts() == []
        assert list(store.artifacts_of_kind("checkpoint")) == ["checkpoint/epoch_000"]

    def test_missing_and_dropped(self, tiny_config, tmp_path):
        store = RunManifestStore(tmp_path / "run", tiny_config)
        store.record_artifact("checkpoint/epoch_000", tmp_path / "run" / "gone.npz", "checkpoint")
        store.record_artifact("checkpoint/epoch_001", tmp_path / "run" / "gone2.npz", "checkpoint")
        store.record_artifact("metrics", tmp_path / "run" / "metrics.jsonl", "metrics")
        assert len(store.missing_artifacts()) == 3
        store.drop_artifacts("checkpoint/")
        assert list(store.load().artifacts) == ["metrics"]

    def test_commands_accumulate(self, tiny_config, tmp_path):
        store = RunManifestStore(tmp_path / "run", tiny_config)
        store.record_command("train", {"epochs": 2})
        store.record_command("search", {})
        assert [c["command"] for c in store.load().commands] == ["train", "search"]

    def test_corrupt_manifest(self, tiny_config, tmp_path):
        store = RunManifestStore(tmp_path / "run", tiny_config)
        store.record_command("synth", {})
        store.manifest_file.write_text("{not json")
        with pytest.raises(CheckpointError):
            store.load()

    def test_foreign_format(self, tiny_config, tmp_path):
        store = RunManifestStore(tmp_path / "run", tiny_config)
        store.record_command("synth", {})
        document = json.loads(store.manifest_file.read_text())
        document["format"] = "other/1"
        store.manifest_file.write_text(json.dumps(document))
        with pytest.raises(CheckpointError):
            store.load()


class TestErrors:
    @pytest.mark.parametrize(
        "error, code, base",
        [
            (ContractError("x"), 3, ValueError),
            (DimensionError("matmul", (2, 3), (4, 5)), 3, ValueError),
            (ConfigError("x", key="a.b"), 2, ValueError),
            (NumericError("x"), 4, ArithmeticError),
            (CheckpointError("x"), 5, OSError),
        ],
    )
    def test_exit_codes_and_bases(self, error, code, base):
        assert isinstance(error, TODMError)
        assert isinstance(error, base)
        assert error.exit_code == code

    def test_messages(self):
        assert str(ConfigError("bad value", key="train.lr")) == "train.lr: bad value"
        assert str(DimensionError("add", (2,), (3,))) == "add: incompatible shapes (2,) vs (3,)"


class TestLogging:
    def test_fallback_without_config_file(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        setup_logging(config_path="missing.yaml", logs_dir=str(tmp_path / "logs"))
        get_logger("src.test").debug("hello")
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert "hello" in (tmp_path / "logs" / "todm.log").read_text()

    def test_progress_requires_status_field(self):
        with make_progress(disable=True) as progress:
            task = progress.add_task("epochs", total=2, status="")
            progress.update(task, advance=1, status="loss 1.0")
            assert progress.tasks[0].completed == 1
