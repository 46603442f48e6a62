"""Middlebury ``.flo`` reader and writer."""

from __future__ import annotations

import os

import numpy as np

FLO_MAGIC = np.float32(202021.25)
HEADER_BYTES = 12


class FloFormatError(ValueError):
    """Malformed ``.flo`` content; ``offset`` is the byte where reading failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _as_hw2(flow) -> np.ndarray:
    a = np.asarray(getattr(flow, "data", flow))
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError(f"write_flo expects batch 1, got {a.shape}")
        a = a[0]
    if a.ndim != 3 or a.shape[0] != 2:
        raise ValueError(f"write_flo expects a 2 x H x W field, got {a.shape}")
    return a


def encode_flo(flow) -> bytes:
    a = _as_hw2(flow)
    _, H, W = a.shape
    header = FLO_MAGIC.astype("<f4").tobytes() + np.array([W, H], dtype="<i4").tobytes()
    payload = np.ascontiguousarray(a.transpose(1, 2, 0)).astype("<f4").tobytes()
    return header + payload


def write_flo(flow, path) -> None:
    """Write a 2 x H x W (or 1 x 2 x H x W) field as float32 ``.flo``."""
    data = encode_flo(flow)
    with open(path, "wb") as fh:
        fh.write(data)


def decode_flo(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FloFormatError("truncated magic", len(buf))
    magic = np.frombuffer(buf[:4], dtype="<f4")[0]
    if magic != FLO_MAGIC:
        raise FloFormatError(f"bad magic {magic!r}", 0)
    if len(buf) < HEADER_BYTES:
        raise FloFormatError("truncated header", len(buf))
    W, H = (int(v) for v in np.frombuffer(buf[4:12], dtype="<i4"))
    if W <= 0 or H <= 0:
        raise FloFormatError(f"invalid extents {W}x{H}", 4)
    need = HEADER_BYTES + 8 * W * H
    if len(buf) < need:
        raise FloFormatError(f"truncated payload, expected {need} bytes, got {len(buf)}", len(buf))
    if len(buf) > need:
        raise FloFormatError(f"{len(buf) - need} unexpected trailing bytes", need)
    data = np.frombuffer(buf[HEADER_BYTES:need], dtype="<f4").reshape(H, W, 2)
    return np.ascontiguousarray(data.transpose(2, 0, 1)).astype(np.float32)


def read_flo(path) -> np.ndarray:
    """Read a ``.flo`` file as a 2 x H x W float32 array."""
    with open(os.fspath(path), "rb") as fh:
        return decode_flo(fh.read())
