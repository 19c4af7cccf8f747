"""
Checkpoint files.

Layout (little-endian):
    magic b"RMCKPT\\0\\0", uint32 version, uint32 entry count,
    uint64 step, uint64 epoch, float64 best validation accuracy,
    then per entry: uint16 name length, utf-8 name, uint8 ndim,
    uint32 per dimension, float64 data (row-major).

Entry names are prefixed with "param/", "ema/" or "velocity/".
"""

from pathlib import Path
from typing import Dict
import logging
import struct

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.core.exceptions import FormatError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RMCKPT\x00\x00"
CHECKPOINT_VERSION = 1
HEADER = struct.Struct("<8sIIQQd")
SECTIONS = ("param", "ema", "velocity")


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: Dict[str, np.ndarray]
    ema: Dict[str, np.ndarray] = {}
    velocity: Dict[str, np.ndarray] = {}
    step: int = 0
    epoch: int = 0
    best_accuracy: float = float("nan")

    def evaluation_params(self) -> Dict[str, np.ndarray]:
        """EMA shadow when present, raw parameters otherwise"""
        return self.ema or self.params


def save_checkpoint(checkpoint: Checkpoint, path: str) -> Path:
    entries = [
        (f"{section}/{name}", array)
        for section, arrays in zip(SECTIONS, (checkpoint.params, checkpoint.ema, checkpoint.velocity))
        for name, array in arrays.items()
    ]
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    temporary = target.with_suffix(target.suffix + ".tmp")

    with temporary.open("wb") as handle:
        handle.write(HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(entries),
            checkpoint.step, checkpoint.epoch, checkpoint.best_accuracy,
        ))
        for name, array in entries:
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", array.ndim))
            handle.write(struct.pack(f"<{array.ndim}I", *array.shape))
            handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    temporary.replace(target)
    logger.debug("Saved checkpoint at step %d to %s", checkpoint.step, target)
    return target


def load_checkpoint(path: str) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise FormatError("file shorter than the checkpoint header", offset=len(data))
    magic, version, count, step, epoch, best = HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file", offset=0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=8)

    sections: Dict[str, Dict[str, np.ndarray]] = {section: {} for section in SECTIONS}
    offset = HEADER.size
    try:
        for index in range(count):
            (length,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + length].decode("utf-8")
            offset += length
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if offset + 8 * size > len(data):
                raise FormatError(f"entry {name!r} runs past the end of the file", offset=offset, record_index=index)
            array = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape)
            offset += 8 * size

            section, _, key = name.partition("/")
            if section not in sections or not key:
                raise FormatError(f"unknown checkpoint entry {name!r}", offset=offset, record_index=index)
            sections[section][key] = array.astype(np.float64)
    except struct.error as e:
        raise FormatError(f"truncated checkpoint: {e}", offset=offset) from e

    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes", offset=offset)
    return Checkpoint(
        params=sections["param"],
        ema=sections["ema"],
        velocity=sections["velocity"],
        step=step,
        epoch=epoch,
        best_accuracy=best,
    )
