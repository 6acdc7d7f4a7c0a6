"""Writer for the "CTSB" tensor container.

Independent serializer for the format the explanation engine reads:
magic ``CTSB``, little-endian u32 version (1) and u32 tensor count,
then per tensor a u16 name length, the UTF-8 name, a u8 rank, rank u64
dims, and the float32 payload. Kept separate from the reader side on
purpose so format drift shows up as a test failure, not silent reuse.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

MAGIC = b"CTSB"
VERSION = 1


def write_blob(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if arr.ndim < 1:
            arr = arr.reshape(1)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)
