"""Versioned binary parameter container.

Layout (all integers uint32 little-endian)::

    b"GFCK" | version | count
    count x ( name_len | name bytes (utf-8) | rank | extents... | float32 LE payload )

Records are written in sorted name order so equal parameter sets always
serialise to equal bytes.
"""

from __future__ import annotations

import struct
from typing import Dict, Mapping

import numpy as np

from guidedflow.tensor import Tensor, parameter

TAG = b"GFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(params: Mapping[str, object]) -> bytes:
    out = [TAG, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        a = np.asarray(getattr(params[name], "data", params[name]))
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(out)


def decode(buf: bytes) -> Dict[str, np.ndarray]:
    if buf[:4] != TAG:
        raise CheckpointError(f"not a checkpoint: bad tag {buf[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(buf):
        raise CheckpointError(f"trailing bytes after record {count} at byte {pos}")
    return params


def save(params: Mapping[str, object], path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(params))


def load(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def load_into(params: Dict[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy ``arrays`` into an initialised parameter set, checking names and shapes."""
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing:
        raise CheckpointError(f"checkpoint lacks parameter {missing[0]}")
    if extra:
        raise CheckpointError(f"checkpoint has unexpected parameter {extra[0]}")
    for name, p in params.items():
        a = arrays[name]
        if a.shape != p.shape:
            raise CheckpointError(f"shape mismatch for parameter {name}: checkpoint {a.shape} vs model {p.shape}")
        params[name] = parameter(a.astype(p.dtype), name=name)
