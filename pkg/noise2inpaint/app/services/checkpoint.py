"""Binary checkpoints: magic, JSON header, then a little-endian float32 tensor table.

Layout::

    b"N2ICKPT1"
    u32 header length, UTF-8 JSON header (mode, channels, unet, unroll)
    u32 entry count
    per entry: u32 name length, UTF-8 name, u32 rank, rank × u32 dims,
               float32 payload in row-major order

Models compute in float64 but are stored in float32, so a reloaded model
agrees with the in-memory one only to about 1e-6. Compare repeated runs
file to file, never a live model against a loaded one.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, ValidationError
from torch import nn

from noise2inpaint.app.core.config import torch_dtype
from noise2inpaint.app.core.errors import CheckpointError
from noise2inpaint.app.core.storage import atomic_write_bytes
from noise2inpaint.app.schemas.training import TrainMode, UNetConfig
from noise2inpaint.app.schemas.unroll import UnrollConfig
from noise2inpaint.app.services.regularizer import build_model

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"N2ICKPT1"


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: TrainMode
    channels: int
    unet: UNetConfig
    unroll: UnrollConfig | None = None


def encode_checkpoint(model: nn.Module, header: CheckpointHeader) -> bytes:
    header_bytes = header.model_dump_json().encode("utf-8")
    state = model.state_dict()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    parts.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        encoded = name.encode("utf-8")
        payload = tensor.detach().cpu().numpy().astype("<f4")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{payload.ndim}I", payload.ndim, *payload.shape))
        parts.append(payload.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise CheckpointError("truncated checkpoint")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)


def decode_checkpoint(data: bytes) -> tuple[CheckpointHeader, dict[str, np.ndarray]]:
    reader = _Reader(data)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    try:
        header = CheckpointHeader.model_validate(json.loads(reader.take(reader.u32())))
    except (ValueError, ValidationError) as exc:
        raise CheckpointError(f"invalid checkpoint header: {exc}") from exc

    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = payload
    if not reader.exhausted:
        raise CheckpointError("trailing bytes after checkpoint table")
    return header, tensors


def save_checkpoint(model: nn.Module, header: CheckpointHeader, path: Path | str) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(model, header))
    logger.info("Checkpoint written to %s", path)
    return path


def load_checkpoint(path: Path | str) -> tuple[nn.Module, CheckpointHeader]:
    """Rebuild the model described by the header and load its weights."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    header, tensors = decode_checkpoint(path.read_bytes())
    model = build_model(header.mode, header.unet, header.channels, header.unroll)
    expected = model.state_dict()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointError(f"architecture mismatch: missing {missing}, unexpected {extra}")
    state = {}
    for name, reference in expected.items():
        if tuple(reference.shape) != tensors[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {tuple(reference.shape)} vs {tensors[name].shape}"
            )
        value = torch.from_numpy(tensors[name].astype(np.float64))
        state[name] = value.to(reference.dtype)
    model.load_state_dict(state)
    model.to(torch_dtype())
    model.eval()
    logger.info("Loaded %s checkpoint from %s", header.mode.value, path)
    return model, header
