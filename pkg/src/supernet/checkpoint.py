"""Versioned single-file checkpoints for Supernets and extracted subnetworks.

Layout (numpy ``.npz`` archive, uncompressed so arrays round-trip bit-exactly):

    __meta__        uint8 bytes of a UTF-8 JSON document:
                    {"format": "todm-ckpt/1", "kind": "supernet" | "subnetwork",
                     "search_space": {...}, "dims": {...}, "subnetwork": "d0:...",
                     "physical_width": int, "training": {...}, "optimizer": {...}}
    param/<name>    float64 weight tensor, shape as stored
    opt/m/<name>    Adam first moment   (only when an optimizer state is saved)
    opt/v/<name>    Adam second moment
"""

import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from src.autodiff.tensor import Tensor, parameter
from src.optim.adam import OptimizerState
from src.supernet.model import ModelDims, SubnetworkModel, SupernetModel
from src.supernet.search_space import SearchSpace, parse_config_key
from src.utils.errors import CheckpointError

CHECKPOINT_FORMAT = "todm-ckpt/1"


@dataclass
class Checkpoint:
    """Everything needed to resume training or run search."""

    model: SupernetModel
    optimizer: Optional[OptimizerState] = None
    training: Dict[str, Any] = field(default_factory=dict)
    path: Optional[Path] = None

    @property
    def epoch(self) -> int:
        """Index of the last completed epoch, -1 when none."""
        return int(self.training.get("epoch", -1))


def _write_archive(path: Path, meta: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buffer = io.BytesIO()
    np.savez(buffer, **payload)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(buffer.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def _read_archive(path: Union[str, Path]) -> tuple:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path} has no __meta__ record")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} has format {meta.get('format')!r}, expected {CHECKPOINT_FORMAT!r}")
    return meta, arrays


def save_checkpoint(
    path: Union[str, Path],
    model: SupernetModel,
    optimizer: Optional[OptimizerState] = None,
    training: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write the Supernet, optional optimizer state and training metadata.

    Args:
        path: Destination file (conventionally ``*.npz``)
        model: Supernet to save
        optimizer: Optimizer state to embed
        training: JSON-serializable metadata (epoch, schedule state, config snapshot)

    Returns:
        Path written
    """
    meta: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "kind": "supernet",
        "search_space": model.space.model_dump(mode="json"),
        "dims": model.dims.to_dict(),
        "training": training or {},
    }
    arrays = {f"param/{name}": t.data for name, t in model.params.items()}
    if optimizer is not None:
        meta["optimizer"] = optimizer.hyperparameters()
        for name, moment in optimizer.m.items():
            arrays[f"opt/m/{name}"] = moment
        for name, moment in optimizer.v.items():
            arrays[f"opt/v/{name}"] = moment
    return _write_archive(Path(path), meta, arrays)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a Supernet checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: If the file is missing, unreadable or not a Supernet checkpoint
    """
    meta, arrays = _read_archive(path)
    if meta.get("kind") != "supernet":
        raise CheckpointError(f"{path} holds a {meta.get('kind')!r}, not a supernet")
    space = SearchSpace(**meta["search_space"])
    dims = ModelDims(**meta["dims"])
    params = {
        key[len("param/") :]: parameter(value, name=key[len("param/") :])
        for key, value in arrays.items()
        if key.startswith("param/")
    }
    model = SupernetModel(space, dims, params=params)

    optimizer = None
    if "optimizer" in meta:
        optimizer = OptimizerState.from_hyperparameters(
            meta["optimizer"],
            m={k[len("opt/m/") :]: v for k, v in arrays.items() if k.startswith("opt/m/")},
            v={k[len("opt/v/") :]: v for k, v in arrays.items() if k.startswith("opt/v/")},
        )
    return Checkpoint(model=model, optimizer=optimizer, training=meta.get("training", {}), path=Path(path))


def save_subnetwork(path: Union[str, Path], subnet: SubnetworkModel, details: Optional[Dict[str, Any]] = None) -> Path:
    """Write an extracted subnetwork as a standalone deployable file."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "kind": "subnetwork",
        "subnetwork": subnet.cfg.key(),
        "physical_width": subnet.physical_width,
        "dims": subnet.dims.to_dict(),
        "details": details or {},
    }
    arrays = {f"param/{name}": t.data for name, t in subnet.params.items()}
    return _write_archive(Path(path), meta, arrays)


def load_subnetwork(path: Union[str, Path]) -> SubnetworkModel:
    """Read a file written by :func:`save_subnetwork`."""
    meta, arrays = _read_archive(path)
    if meta.get("kind") != "subnetwork":
        raise CheckpointError(f"{path} holds a {meta.get('kind')!r}, not a subnetwork")
    params = {
        key[len("param/") :]: Tensor(value, name=key[len("param/") :])
        for key, value in arrays.items()
        if key.startswith("param/")
    }
    return SubnetworkModel(
        parse_config_key(meta["subnetwork"]),
        ModelDims(**meta["dims"]),
        params,
        int(meta["physical_width"]),
    )
