"""Checkpoint directory: manifest.json plus params.bin.

params.bin holds little-endian float32 tensors concatenated in manifest order.
"""

import hashlib
import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from scafusion.config import RunConfig
from scafusion.entities.module import Module, ParamStore
from scafusion.entities.scafusion_model import SCAFusionModel, build_model
from scafusion.errors import CheckpointError, ConfigError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "params.bin"


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(
    model: Module,
    config: RunConfig,
    path: str | Path,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Write a checkpoint atomically (temporary directory, then rename).

    Args:
        model: Model whose parameters are stored.
        config: Run configuration snapshot stored with the weights.
        path: Target directory; replaced if it exists.
        extra: Additional manifest fields (step, history summary).

    Returns:
        The checkpoint directory.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    store = ParamStore.from_module(model)
    tensors, chunks, offset = [], [], 0
    for name, parameter in store.items():
        data = np.ascontiguousarray(parameter.data, dtype="<f4").tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(parameter.shape),
                "offset": offset,
                "nbytes": len(data),
                "trainable": parameter.trainable,
                "sha256": _digest(data),
            }
        )
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": "<f4",
        "config": config.to_dict(),
        "parameters": store.report(),
        "tensors": tensors,
        "payload_sha256": _digest(payload),
        **(extra or {}),
    }
    staging = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        (staging / PAYLOAD).write_bytes(payload)
        (staging / MANIFEST).write_text(json.dumps(manifest, indent=2))
        if path.exists():
            retired = path.with_name(f".{path.name}.old")
            shutil.rmtree(retired, ignore_errors=True)
            os.replace(path, retired)
            os.replace(staging, path)
            shutil.rmtree(retired, ignore_errors=True)
        else:
            os.replace(staging, path)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info("checkpoint written to %s (%d tensors)", path, len(tensors))
    return path


def read_manifest(path: str | Path) -> dict[str, Any]:
    """Parsed manifest.

    Raises:
        CheckpointError: If the manifest is missing, malformed or of another
            version.
    """
    manifest_path = Path(path) / MANIFEST
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError as error:
        raise CheckpointError(f"{manifest_path}: missing") from error
    except json.JSONDecodeError as error:
        raise CheckpointError(f"{manifest_path}: not valid JSON ({error})") from error
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{manifest_path}: format version {version} is not supported"
            f" (expected {CHECKPOINT_VERSION})"
        )
    return manifest


def restore_parameters(model: Module, path: str | Path) -> dict[str, Any]:
    """Load stored values and trainable flags into an existing model.

    Raises:
        CheckpointError: On a missing, extra or reshaped tensor, or a hash
            mismatch; the message names the tensor.
    """
    manifest = read_manifest(path)
    try:
        payload = (Path(path) / PAYLOAD).read_bytes()
    except FileNotFoundError as error:
        raise CheckpointError(f"{Path(path) / PAYLOAD}: missing") from error
    store = ParamStore.from_module(model)
    entries = {entry["name"]: entry for entry in manifest["tensors"]}
    missing = [name for name in store if name not in entries]
    if missing:
        raise CheckpointError(f"tensor {missing[0]} is not in the checkpoint")
    unexpected = [name for name in entries if name not in store]
    if unexpected:
        raise CheckpointError(
            f"tensor {unexpected[0]} in the checkpoint has no model counterpart"
        )
    for name, parameter in store.items():
        entry = entries[name]
        stored = tuple(entry["shape"])
        if stored != parameter.shape:
            raise CheckpointError(
                f"tensor {name}: stored shape {stored}"
                f" != model shape {parameter.shape}"
            )
        data = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(data) != entry["nbytes"] or _digest(data) != entry["sha256"]:
            raise CheckpointError(
                f"tensor {name}: payload hash mismatch (corrupt params.bin)"
            )
        parameter.trainable = bool(entry["trainable"])
        parameter.assign(np.frombuffer(data, dtype="<f4").reshape(parameter.shape))
    return manifest


def load_checkpoint(path: str | Path) -> tuple[SCAFusionModel, RunConfig]:
    """Rebuild the model from the stored config snapshot and restore its parameters.

    Raises:
        CheckpointError: If the checkpoint is unreadable or does not match its
            own config.
    """
    manifest = read_manifest(path)
    try:
        config = RunConfig.from_dict(manifest["config"])
    except ConfigError as error:
        raise CheckpointError(
            f"{Path(path) / MANIFEST}: stored config rejected ({error})"
        ) from error
    model = build_model(config)
    restore_parameters(model, path)
    return model, config
