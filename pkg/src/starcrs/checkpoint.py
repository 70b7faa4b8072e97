"""Single-file checkpoint container.

Layout, all little-endian: 8-byte magic ``STARCRS1``, uint64 header length,
UTF-8 JSON header, then the concatenated raw tensor payloads. The header
names every tensor with shape, dtype and byte offset, and carries the
training-stage tag, the config snapshot and any JSON-safe metadata.
Round-trips are bit-exact."""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .errors import CheckpointError

MAGIC = b"STARCRS1"

_DTYPES = {"float32": np.float32, "float64": np.float64,
           "int64": np.int64, "int32": np.int32}


@dataclass
class CheckpointData:
    tensors: dict
    stage: str
    config: RunConfig
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, tensors: dict, stage: str, config: RunConfig,
                    meta: dict | None = None) -> None:
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise CheckpointError(f"tensor {name}: unsupported dtype {dtype}")
        if arr.dtype.byteorder not in ("=", "<", "|"):
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": dtype,
                         "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "stage": stage,
        "config": dataclasses.asdict(config),
        "tensors": entries,
        "meta": meta or {},
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    if start + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    for key in ("stage", "config", "tensors", "meta"):
        if key not in header:
            raise CheckpointError(f"{path}: header missing {key!r}")
    try:
        config = RunConfig(**header["config"])
    except TypeError as e:
        raise CheckpointError(f"{path}: config snapshot mismatch: {e}") from e
    payload = blob[start + header_len:]
    tensors = {}
    for name, ent in header["tensors"].items():
        dtype = _DTYPES.get(ent["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: tensor {name}: bad dtype {ent['dtype']}")
        shape = tuple(int(s) for s in ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        off = int(ent["offset"])
        if off + nbytes > len(payload):
            raise CheckpointError(f"{path}: tensor {name}: truncated payload")
        arr = np.frombuffer(payload[off:off + nbytes],
                            dtype=np.dtype(dtype).newbyteorder("<"))
        tensors[name] = arr.astype(dtype).reshape(shape)
    return CheckpointData(tensors, header["stage"], config, header["meta"])
