"""
Binary checkpoint format.

Layout::

    b"MPRF0001"                magic, versioned
    uint32 little-endian       manifest length in bytes
    manifest                   UTF-8 YAML: model config + ordered parameter names/shapes
    payload                    parameters as little-endian float32, in manifest order

Saving the same weights twice yields identical bytes.
"""

import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import ValidationError

from .errors import CheckpointError
from .models.config import ModelConfig
from .network import MPRNet

logger = logging.getLogger(__name__)

MAGIC = b"MPRF0001"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<I")
_PAYLOAD_DTYPE = np.dtype("<f4")


def encode_checkpoint(model: MPRNet, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    """Serialize ``model`` (config and weights) to checkpoint bytes."""
    named = list(model.named_parameters())
    manifest = {
        "format": FORMAT_VERSION,
        "config": model.config.model_dump(),
        "parameters": [{"name": name, "shape": list(p.shape)} for name, p in named],
        "metadata": metadata or {},
    }
    header = yaml.safe_dump(manifest, sort_keys=False).encode("utf-8")
    payload = b"".join(p.data.astype(_PAYLOAD_DTYPE).tobytes(order="C") for _, p in named)
    return MAGIC + _LENGTH.pack(len(header)) + header + payload


def decode_checkpoint(blob: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Split checkpoint bytes into (manifest, {name: float32 array})."""
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"Bad checkpoint magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    offset = len(MAGIC)
    if len(blob) < offset + _LENGTH.size:
        raise CheckpointError("Checkpoint truncated inside the header")
    (length,) = _LENGTH.unpack_from(blob, offset)
    offset += _LENGTH.size
    if len(blob) < offset + length:
        raise CheckpointError("Checkpoint truncated inside the manifest")
    try:
        manifest = yaml.safe_load(blob[offset:offset + length].decode("utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise CheckpointError(f"Unreadable checkpoint manifest: {e}") from e
    if not isinstance(manifest, dict) or "config" not in manifest or "parameters" not in manifest:
        raise CheckpointError("Checkpoint manifest lacks 'config' or 'parameters'")
    offset += length

    state: Dict[str, np.ndarray] = {}
    for entry in manifest["parameters"]:
        shape = tuple(int(d) for d in entry["shape"])
        nbytes = int(np.prod(shape)) * _PAYLOAD_DTYPE.itemsize
        if len(blob) < offset + nbytes:
            raise CheckpointError(f"Checkpoint truncated inside parameter '{entry['name']}'")
        state[entry["name"]] = np.frombuffer(blob, dtype=_PAYLOAD_DTYPE, count=nbytes // 4, offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"Checkpoint has {len(blob) - offset} trailing bytes")
    return manifest, state


def save_checkpoint(model: MPRNet, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model, metadata))
    logger.info("Checkpoint written to %s", path)
    return path


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    manifest, _ = decode_checkpoint(_read(path))
    return manifest


def load_checkpoint(path: Union[str, Path], precision: Optional[str] = None) -> MPRNet:
    """Rebuild the model described by a checkpoint and load its weights."""
    manifest, state = decode_checkpoint(_read(path))
    config_data = dict(manifest["config"])
    if precision is not None:
        config_data["precision"] = precision
    try:
        config = ModelConfig(**config_data)
    except ValidationError as e:
        raise CheckpointError(f"Checkpoint config is invalid: {e}") from e

    model = MPRNet(config)
    expected: List[Tuple[str, Tuple[int, ...]]] = [(n, p.shape) for n, p in model.named_parameters()]
    stored = [(name, arr.shape) for name, arr in state.items()]
    if expected != stored:
        raise CheckpointError("Checkpoint parameter layout does not match its config")
    model.load_state_dict(state)
    logger.info("Loaded %d parameters from %s", model.param_count(), path)
    return model


def _read(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    return path.read_bytes()
