"""Flat binary parameter container.

Layout (little-endian): magic ``AUDRONCKPT1``; then for each entry a u32 name
length, UTF-8 name, u32 rank, rank x u32 dims and a float32 payload; finally
an 8-byte BLAKE2b digest of everything before it.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AUDRONCKPT1"


class CheckpointError(ValueError):
    pass


def _digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def encode(state: dict) -> bytes:
    parts = [MAGIC]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _digest(body)


def decode(blob: bytes) -> dict:
    if len(blob) < len(MAGIC) + 8 or not blob.startswith(MAGIC):
        raise CheckpointError("not an AUDRONCKPT1 file")
    body, digest = blob[:-8], blob[-8:]
    if _digest(body) != digest:
        raise CheckpointError("checksum mismatch")
    state = {}
    pos = len(MAGIC)
    try:
        while pos < len(body):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(body):
                raise CheckpointError(f"truncated payload for {name!r}")
            state[name] = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError("truncated entry header") from exc
    return state


def save(state: dict, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(state))
    os.replace(tmp, path)


def load(path) -> dict:
    return decode(Path(path).read_bytes())
