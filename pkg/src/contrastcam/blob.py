"""Reader and writer for the "CTSB" tensor blob file.

Layout, all little-endian: magic ``CTSB``, u32 version (must be 1),
u32 tensor count, then per tensor: u16 name length, UTF-8 name bytes,
u8 rank, rank x u64 dims, product(dims) x f32 values. The format is
bit-exact by construction; reading back a written file reproduces every
tensor identically.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from .errors import BlobFormatError
from .tensor import Tensor

MAGIC = b"CTSB"
VERSION = 1


def read_blobs(data: bytes) -> dict[str, Tensor]:
    """Parse blob bytes into a name -> Tensor mapping."""
    if len(data) < 12:
        raise BlobFormatError("blob too short for header")
    if data[:4] != MAGIC:
        raise BlobFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise BlobFormatError(f"unsupported blob version {version}")

    tensors: dict[str, Tensor] = {}
    offset = 12
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            if len(data) < offset + name_len:
                raise BlobFormatError(f"truncated name in tensor {i}")
            offset += name_len
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}Q", data, offset)
            offset += 8 * rank
        except (struct.error, UnicodeDecodeError) as exc:
            raise BlobFormatError(f"corrupt header for tensor {i}: {exc}") from exc
        if rank < 1 or any(d < 1 for d in dims):
            raise BlobFormatError(f"tensor {name!r} has invalid dims {dims}")
        n = 1
        for d in dims:
            n *= d
        end = offset + 4 * n
        if end > len(data):
            raise BlobFormatError(f"truncated values for tensor {name!r}")
        values = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        offset = end
        if name in tensors:
            raise BlobFormatError(f"duplicate tensor name {name!r}")
        tensors[name] = Tensor(values.reshape(dims))
    if offset != len(data):
        raise BlobFormatError(f"{len(data) - offset} trailing bytes after last tensor")
    return tensors


def write_blobs(tensors: Mapping[str, Tensor]) -> bytes:
    """Serialize tensors to blob bytes (the inverse of read_blobs)."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, t in tensors.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise BlobFormatError(f"tensor name too long: {name[:32]!r}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", t.rank))
        parts.append(struct.pack(f"<{t.rank}Q", *t.shape))
        parts.append(np.ascontiguousarray(t.array, dtype="<f4").tobytes())
    return b"".join(parts)
