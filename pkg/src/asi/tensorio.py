"""Binary tensor dump format used by every module that writes features or masks.

Layout, all little-endian:

    magic   4 bytes   b"ASIT"
    version 1 byte    0x01
    rank    1 byte
    dims    rank x uint32
    data    prod(dims) x float32, row-major

Values are stored as float32 even though all arithmetic is float64; loading
widens back to float64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ASIT"
VERSION = 1

__all__ = ["MAGIC", "VERSION", "save_tensor", "load_tensor"]


def save_tensor(path: str | Path, array: np.ndarray) -> Path:
    """Write `array` (any rank from 1 to 255) to `path`; returns the path."""
    a = np.ascontiguousarray(array, dtype=np.float64)
    if a.ndim < 1 or a.ndim > 255:
        raise ValueError(f"tensor rank must be in [1, 255], got {a.ndim}")
    if any(dim > 0xFFFFFFFF for dim in a.shape):
        raise ValueError(f"dimension too large for uint32 header: {a.shape}")
    path = Path(path)
    header = MAGIC + struct.pack("<BB", VERSION, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    payload = a.astype("<f4").tobytes(order="C")
    path.write_bytes(header + payload)
    return path


def load_tensor(path: str | Path) -> np.ndarray:
    """Read a dump written by :func:`save_tensor`; returns float64 data."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, rank = struct.unpack_from("<BB", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    dims = struct.unpack_from(f"<{rank}I", blob, 6)
    offset = 6 + 4 * rank
    count = int(np.prod(dims)) if rank else 0
    expected = offset + 4 * count
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return flat.astype(np.float64).reshape(dims)
