"""Binary tensor snapshots.

Layout: magic ``b"CFMT"``, little-endian ``u32`` rank, ``rank`` little-endian
``u32`` dimensions, then the row-major little-endian ``f64`` payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"CFMT"
_U32 = struct.Struct("<I")


def encode_snapshot(array: np.ndarray) -> bytes:
    data = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    header = MAGIC + _U32.pack(data.ndim) + b"".join(_U32.pack(dim) for dim in data.shape)
    return header + data.tobytes(order="C")


def decode_snapshot(payload: bytes, *, source: str = "<bytes>") -> np.ndarray:
    if len(payload) < 8 or payload[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a tensor snapshot (bad magic)")
    (rank,) = _U32.unpack_from(payload, 4)
    header_size = 8 + 4 * rank
    if len(payload) < header_size:
        raise CheckpointError(f"{source}: truncated header for rank {rank}")
    shape = tuple(_U32.unpack_from(payload, 8 + 4 * axis)[0] for axis in range(rank))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    expected = header_size + 8 * count
    if len(payload) != expected:
        raise CheckpointError(
            f"{source}: payload is {len(payload)} bytes, expected {expected} for shape {shape}"
        )
    data = np.frombuffer(payload, dtype="<f8", count=count, offset=header_size)
    return data.astype(np.float64).reshape(shape)


def write_snapshot(path: Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_snapshot(array))


def read_snapshot(path: Path) -> np.ndarray:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read snapshot {path}: {exc}") from exc
    return decode_snapshot(payload, source=str(path))


__all__ = ["MAGIC", "decode_snapshot", "encode_snapshot", "read_snapshot", "write_snapshot"]
