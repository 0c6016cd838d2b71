"""
Checkpoint persistence.

Binary layout (all integers little-endian):

    magic      8 bytes  b"RSPRECT1"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON metadata
    count      u32      number of tensors
    per tensor:
        name_len u32, name (UTF-8), e.g. "actor/fc1.weight" or "base/critic1/head.bias"
        rank     u32
        dims     rank x u32
        data     prod(dims) x float32

Tensors are grouped into networks by the name prefix before the last "/";
each network's arch tag is stored in the metadata.
"""

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from services.resprect.app.engines.residual import PretrainedPolicy
from services.resprect.app.engines.tensor_nn import ParamSet
from services.resprect.app.exceptions import (
    BadMagicError,
    CheckpointFormatError,
    DimensionError,
    IncompatibleCheckpointError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from shared.utils.helpers import deserialize_json, serialize_json

logger = structlog.get_logger()

MAGIC = b"RSPRECT1"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")


class CheckpointMetadata(BaseModel):
    """Self-description stored in every checkpoint."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: str
    config_hash: str = ""
    obs_dim: int = Field(ge=0)
    action_dim: int = Field(ge=0)
    step: int = Field(default=0, ge=0)
    arch_tags: Dict[str, str] = Field(default_factory=dict)
    extra: Dict[str, Any] = Field(default_factory=dict)


@dataclass(frozen=True)
class Checkpoint:
    metadata: CheckpointMetadata
    networks: Dict[str, ParamSet]

    @property
    def is_residual(self) -> bool:
        return "base/actor" in self.networks

    def subset(self, prefix: str) -> Dict[str, ParamSet]:
        """Networks under a prefix with the prefix stripped, e.g. subset("base")."""
        head = prefix.rstrip("/") + "/"
        return {k[len(head):]: v for k, v in self.networks.items() if k.startswith(head)}

    def top_level(self) -> Dict[str, ParamSet]:
        return {k: v for k, v in self.networks.items() if "/" not in k}


# ============================================
# Encoding
# ============================================

def encode_checkpoint(networks: Mapping[str, ParamSet], metadata: CheckpointMetadata) -> bytes:
    """Serialize networks; metadata.arch_tags is filled from the networks."""
    meta = metadata.model_copy(
        update={"arch_tags": {name: params.arch_tag for name, params in networks.items()}}
    )
    meta_bytes = serialize_json(meta.model_dump()).encode("utf-8")

    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(meta_bytes)), meta_bytes]
    tensors = [(f"{net}/{name}", t) for net, params in networks.items() for name, t in params.items()]
    parts.append(_U32.pack(len(tensors)))
    for name, tensor in tensors:
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(tensor.ndim))
        parts.extend(_U32.pack(d) for d in tensor.shape)
        parts.append(np.ascontiguousarray(tensor, dtype=_F32).tobytes())
    return b"".join(parts)


def save_checkpoint(
    path: Union[str, Path], networks: Mapping[str, ParamSet], metadata: CheckpointMetadata
) -> Path:
    """Write atomically: a partially written file never replaces a good one."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(networks, metadata)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    logger.info("checkpoint_saved", path=str(path), mode=metadata.mode, step=metadata.step, size=len(data))
    return path


# ============================================
# Decoding
# ============================================

class _Reader:
    def __init__(self, data: bytes, path: Optional[Path]):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n: int, section: str) -> bytes:
        available = len(self.data) - self.offset
        if n > available:
            raise TruncatedCheckpointError(self.path, n, available, section)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, section: str) -> int:
        return _U32.unpack(self.take(_U32.size, section))[0]


def decode_checkpoint(data: bytes, path: Optional[Path] = None) -> Checkpoint:
    if len(data) < len(MAGIC):
        if MAGIC.startswith(data):
            raise TruncatedCheckpointError(path, len(MAGIC), len(data), "magic")
        raise BadMagicError(path, data)
    reader = _Reader(data, path)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise BadMagicError(path, magic)
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(path, version, FORMAT_VERSION)

    meta_raw = reader.take(reader.u32("metadata length"), "metadata")
    try:
        metadata = CheckpointMetadata.model_validate(deserialize_json(meta_raw.decode("utf-8")))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointFormatError(f"Unreadable checkpoint metadata: {e}", path) from e

    grouped: Dict[str, Dict[str, np.ndarray]] = {}
    for i in range(reader.u32("tensor count")):
        name = reader.take(reader.u32(f"tensor {i} name length"), f"tensor {i} name").decode("utf-8")
        rank = reader.u32(f"tensor {name} rank")
        dims = tuple(reader.u32(f"tensor {name} dims") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        raw = reader.take(count * _F32.itemsize, f"tensor {name} data")
        network, sep, local = name.rpartition("/")
        if not sep:
            raise CheckpointFormatError(f"Tensor name '{name}' has no network prefix", path)
        grouped.setdefault(network, {})[local] = np.frombuffer(raw, dtype=_F32).reshape(dims).astype(np.float32)

    if reader.offset != len(data):
        raise CheckpointFormatError(
            "Trailing bytes after the last tensor", path, details={"extra_bytes": len(data) - reader.offset}
        )

    networks: Dict[str, ParamSet] = {}
    for network, entries in grouped.items():
        tag = metadata.arch_tags.get(network)
        if tag is None:
            raise CheckpointFormatError(f"No arch tag recorded for network '{network}'", path)
        try:
            networks[network] = ParamSet(entries, tag)
        except DimensionError as e:
            raise CheckpointFormatError(
                f"Tensors of '{network}' do not match arch {tag}", path, details=e.details
            ) from e
    return Checkpoint(metadata, networks)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointFormatError(f"Checkpoint not found: {path}", path, "CHECKPOINT_NOT_FOUND")
    return decode_checkpoint(path.read_bytes(), path)


def load_pretrained_policy(path: Union[str, Path], obs_dim: int, action_dim: int) -> PretrainedPolicy:
    """
    Typed load of a plain SAC checkpoint as a frozen base policy.

    Raises:
        IncompatibleCheckpointError: residual checkpoint, or architectures that
            do not fit the environment dimensions
    """
    checkpoint = load_checkpoint(path)
    if checkpoint.is_residual:
        raise IncompatibleCheckpointError(
            "A residual checkpoint cannot serve as a base policy", network="base/actor"
        )
    return PretrainedPolicy.from_networks(checkpoint.networks, obs_dim, action_dim)
