"""
Checkpoint file format (version 1)

    offset  size  content
    0       8     magic b"MOTCKPT\\0"
    8       4     format version, uint32 little-endian
    12      4     header length H, uint32 little-endian
    16      H     UTF-8 JSON header with sorted keys:
                  {"version": 1, "kind": str, "metadata": {...},
                   "tensors": [{"name", "shape", "offset", "count"}, ...]}
    16+H    ...   payload: every tensor as little-endian float64, row-major,
                  concatenated in header order; "offset" counts float64
                  elements from the start of the payload

Tensors are written in sorted name order and the header holds no timestamps,
so equal parameters and metadata give byte-identical files.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np
import orjson

from app.core.errors import CheckpointFormatError
from app.core.optim import ParameterSet

MAGIC = b"MOTCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def encode_checkpoint(params: Mapping[str, np.ndarray], kind: str, metadata: Optional[dict[str, Any]] = None) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for name in sorted(params):
        array = np.ascontiguousarray(params[name], dtype="<f8")
        if not np.isfinite(array).all():
            raise CheckpointFormatError(f"Refusing to save non-finite tensor '{name}'")
        tensors.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        chunks.append(array.tobytes())
        offset += array.size
    header = orjson.dumps(
        {"version": FORMAT_VERSION, "kind": kind, "metadata": metadata or {}, "tensors": tensors},
        option=orjson.OPT_SORT_KEYS,
    )
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> tuple[ParameterSet, str, dict[str, Any]]:
    if len(blob) < _PREFIX.size:
        raise CheckpointFormatError("File is too short to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointFormatError("Bad checkpoint magic")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"Unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = orjson.loads(blob[start:start + header_len])
    except orjson.JSONDecodeError as exc:
        raise CheckpointFormatError(f"Corrupt checkpoint header: {exc}") from exc
    payload = np.frombuffer(blob, dtype="<f8", offset=start + header_len)
    params = ParameterSet()
    for entry in header["tensors"]:
        begin, count = entry["offset"], entry["count"]
        if begin + count > payload.size:
            raise CheckpointFormatError(f"Tensor '{entry['name']}' runs past the end of the payload")
        params.add(entry["name"], payload[begin:begin + count].reshape(entry["shape"]))
    return params, header["kind"], header["metadata"]


def save_checkpoint(path: Union[str, Path], params: Mapping[str, np.ndarray], kind: str,
                    metadata: Optional[dict[str, Any]] = None) -> Path:
    atomic_write_bytes(path, encode_checkpoint(params, kind, metadata))
    return Path(path)


def load_checkpoint(path: Union[str, Path], expected_kind: Optional[str] = None) -> tuple[ParameterSet, dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointFormatError(f"Checkpoint not found: {path}")
    params, kind, metadata = decode_checkpoint(path.read_bytes())
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointFormatError(f"{path} holds a '{kind}' checkpoint, expected '{expected_kind}'")
    return params, metadata
