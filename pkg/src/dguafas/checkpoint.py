"""Binary checkpoint container.

Layout (little-endian)::

    b"DGUA" | u32 version | u32 meta_len | meta (UTF-8 JSON)
    | u32 n_arrays | n_arrays x (u32 name_len | name | u32 ndim | ndim x u64 dim | f64 data)
    | u32 crc32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, SchemaError
from .fileio import atomic_write_bytes

MAGIC = b"DGUA"
FORMAT_VERSION = 1


def encode(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise SchemaError("not a DGUA checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint CRC32 mismatch; file is corrupt")
    version, meta_len = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    pos = 12
    meta = json.loads(body[pos : pos + meta_len].decode())
    pos += meta_len
    (n,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arrays = {}
    for _ in range(n):
        (name_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos : pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(body):
        raise SchemaError("trailing bytes after the last array")
    return arrays, meta


def save(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    atomic_write_bytes(path, encode(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
