"""Flat binary checkpoint files (``WFTS``).

Layout, all little-endian::

    b"WFTS" | u8 version
    repeated until EOF:
        u32 name_len | name (utf-8) | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"WFTS"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or unsupported checkpoint file."""


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<B", VERSION)]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 5 or blob[:4] != MAGIC:
        raise CheckpointError("not a WFTS checkpoint (bad magic)")
    version = blob[4]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 5

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
        if name in out:
            raise CheckpointError(f"duplicate parameter record {name!r}")
        out[name] = data.astype(np.float32)
    return out


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
