"""Versioned binary checkpoints.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(:class:`~skillfocus.models.CheckpointHeader`), then every array as contiguous
little-endian float64 in header order. Files are written to a temporary
sibling and moved into place, so a crash never leaves a half-written file
under the final name.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from skillfocus import __version__
from skillfocus.core.exceptions import (
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    OutputDirectoryError,
)
from skillfocus.core.layers import PolicyParams
from skillfocus.core.optim import OptimizerState
from skillfocus.models.schemas import ArraySpec, CheckpointHeader

logger = logging.getLogger(__name__)

MAGIC = b"SKFCKPT\x00"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    """Everything needed to resume training or evaluate a policy."""

    params: PolicyParams
    config: Dict[str, Any]
    config_hash: str
    iteration: int = 0
    optimizer: Optional[OptimizerState] = None
    estimator_optimizer: Optional[OptimizerState] = None
    command_weights: Optional[np.ndarray] = None
    difficulty_weights: Optional[np.ndarray] = None
    curriculum: Dict[str, Any] = field(default_factory=dict)
    rng_states: Dict[str, Any] = field(default_factory=dict)
    estimator_frozen: bool = False
    package_version: str = __version__


def _optimizer_meta(state: Optional[OptimizerState]) -> Dict[str, Any]:
    if state is None:
        return {}
    return {
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.step,
        "names": state.names,
    }


def _collect_arrays(checkpoint: Checkpoint) -> Dict[str, np.ndarray]:
    arrays = {f"params/{name}": checkpoint.params[name] for name in checkpoint.params}
    for prefix, state in (("adam", checkpoint.optimizer), ("estimator_adam", checkpoint.estimator_optimizer)):
        if state is None:
            continue
        for name in state.names:
            arrays[f"{prefix}/m/{name}"] = state.m[name]
            arrays[f"{prefix}/v/{name}"] = state.v[name]
    if checkpoint.command_weights is not None:
        arrays["curriculum/command_weights"] = checkpoint.command_weights
    if checkpoint.difficulty_weights is not None:
        arrays["curriculum/difficulty_weights"] = checkpoint.difficulty_weights
    return arrays


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path = Path(path)
    arrays = _collect_arrays(checkpoint)
    specs, offset = [], 0
    for name, array in arrays.items():
        count = int(np.asarray(array).size)
        specs.append(ArraySpec(name=name, shape=list(np.shape(array)), offset=offset, count=count))
        offset += count * _DTYPE.itemsize

    header = CheckpointHeader(
        format_version=FORMAT_VERSION,
        package_version=checkpoint.package_version,
        config_hash=checkpoint.config_hash,
        config=checkpoint.config,
        iteration=checkpoint.iteration,
        arrays=specs,
        payload_bytes=offset,
        optimizer=_optimizer_meta(checkpoint.optimizer),
        estimator_optimizer=_optimizer_meta(checkpoint.estimator_optimizer),
        curriculum=checkpoint.curriculum,
        rng_states=checkpoint.rng_states,
        estimator_frozen=checkpoint.estimator_frozen,
    )
    header_bytes = header.model_dump_json().encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as handle:
            handle.write(MAGIC)
            handle.write(_LENGTH.pack(len(header_bytes)))
            handle.write(header_bytes)
            for array in arrays.values():
                handle.write(np.ascontiguousarray(array, dtype=_DTYPE).tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise OutputDirectoryError(f"Cannot write checkpoint {path}: {exc}", details={"path": str(path)}) from exc
    logger.info(f"Checkpoint written: {path} (iteration {checkpoint.iteration})")
    return path


def read_header(path: Path) -> Tuple[CheckpointHeader, int]:
    """Parse and validate the header; return it with the payload's byte offset."""
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            prefix = handle.read(len(MAGIC) + _LENGTH.size)
            if len(prefix) < len(MAGIC) + _LENGTH.size or prefix[: len(MAGIC)] != MAGIC:
                raise CorruptCheckpointError("Missing or damaged checkpoint magic", details={"path": str(path)})
            (length,) = _LENGTH.unpack(prefix[len(MAGIC):])
            raw = handle.read(length)
    except FileNotFoundError as exc:
        raise CorruptCheckpointError(f"Checkpoint not found: {path}", details={"path": str(path)}) from exc
    if len(raw) != length:
        raise CorruptCheckpointError("Checkpoint header is truncated", details={"path": str(path)})
    try:
        payload = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError("Checkpoint header is not valid JSON", details={"path": str(path)}) from exc
    if isinstance(payload, dict) and payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(payload.get("format_version"), FORMAT_VERSION)
    try:
        header = CheckpointHeader.model_validate(payload)
    except ValidationError as exc:
        raise CorruptCheckpointError(
            "Checkpoint header does not match the expected schema", details={"path": str(path)}
        ) from exc
    return header, len(MAGIC) + _LENGTH.size + length


def _restore_optimizer(meta: Dict[str, Any], arrays: Mapping[str, np.ndarray], prefix: str) -> Optional[OptimizerState]:
    if not meta:
        return None
    names = meta["names"]
    return OptimizerState(
        lr=meta["lr"],
        beta1=meta["beta1"],
        beta2=meta["beta2"],
        eps=meta["eps"],
        step=meta["step"],
        m={name: arrays[f"{prefix}/m/{name}"] for name in names},
        v={name: arrays[f"{prefix}/v/{name}"] for name in names},
    )


def load_checkpoint(path: Path, expected_shapes: Optional[Mapping[str, Tuple[int, ...]]] = None) -> Checkpoint:
    """Load a checkpoint, optionally checking parameter shapes against ``expected_shapes``.

    Nothing is returned unless the whole file validates.
    """
    header, start = read_header(path)
    with open(path, "rb") as handle:
        handle.seek(start)
        payload = handle.read()
    if len(payload) != header.payload_bytes:
        raise CorruptCheckpointError(
            f"Checkpoint payload has {len(payload)} bytes, header declares {header.payload_bytes}",
            details={"path": str(path)},
        )

    arrays: Dict[str, np.ndarray] = {}
    for spec in header.arrays:
        if int(np.prod(spec.shape, dtype=np.int64)) != spec.count or spec.offset + spec.count * 8 > len(payload):
            raise CorruptCheckpointError(f"Array '{spec.name}' is inconsistent with the payload")
        data = np.frombuffer(payload, dtype=_DTYPE, count=spec.count, offset=spec.offset)
        arrays[spec.name] = data.astype(np.float64).reshape(spec.shape)

    params = {name[len("params/"):]: value for name, value in arrays.items() if name.startswith("params/")}
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in params:
                raise CheckpointShapeError(name, shape, ())
            if tuple(params[name].shape) != tuple(shape):
                raise CheckpointShapeError(name, shape, params[name].shape)

    return Checkpoint(
        params=PolicyParams(params),
        config=header.config,
        config_hash=header.config_hash,
        iteration=header.iteration,
        optimizer=_restore_optimizer(header.optimizer, arrays, "adam"),
        estimator_optimizer=_restore_optimizer(header.estimator_optimizer, arrays, "estimator_adam"),
        command_weights=arrays.get("curriculum/command_weights"),
        difficulty_weights=arrays.get("curriculum/difficulty_weights"),
        curriculum=header.curriculum,
        rng_states=header.rng_states,
        estimator_frozen=header.estimator_frozen,
        package_version=header.package_version,
    )
