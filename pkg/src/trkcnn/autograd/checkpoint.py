"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ORNK"                      magic
    u32  format version          (currently 1)
    u64  parameter count
    u32  sidecar length, then that many bytes of UTF-8 JSON (model config)
    per parameter:
        u32  name length, UTF-8 name
        u32  rank
        u64  extent, repeated rank times
        f64  values in row-major order

Values are always stored as float64, so float32 and float64 arrays both
round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

MAGIC = b"ORNK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray], sidecar: dict = None) -> bytes:
    side = json.dumps(sidecar or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(arrays)), struct.pack("<I", len(side)), side]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    try:
        return _loads(buf)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def _loads(buf: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = 4
    version, count = struct.unpack_from("<IQ", buf, pos)
    pos += 12
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (side_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    sidecar = json.loads(buf[pos:pos + side_len].decode("utf-8"))
    pos += side_len
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last parameter record")
    return arrays, sidecar


def save(path, arrays: Mapping[str, np.ndarray], sidecar: dict = None):
    Path(path).write_bytes(dumps(arrays, sidecar))


def load(path) -> Tuple[Dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
