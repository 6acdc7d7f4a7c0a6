"""Dense float32 tensors and the handful of array primitives built on them.

Numeric contract used throughout the package: tensors store float32,
row-major, with activations ordered (batch, channel, height, width).
Reductions accumulate in float64 and round to float32 only when the
result tensor is materialized, so every operation is deterministic and
safe to rerun bit-for-bit.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

Shape = tuple[int, ...]


class Tensor:
    """Immutable dense float32 array with a fixed shape.

    Wraps a C-contiguous ``numpy.ndarray`` whose write flag is cleared,
    so instances can be shared freely across threads.
    """

    __slots__ = ("_array",)

    def __init__(self, data: Iterable[float] | np.ndarray, shape: Sequence[int] | None = None):
        arr = np.asarray(data, dtype=np.float32)
        if shape is not None:
            dims = tuple(int(d) for d in shape)
            if any(d < 1 for d in dims):
                raise ShapeError(f"dimensions must be >= 1, got {dims}")
            if arr.size != int(np.prod(dims)):
                raise ShapeError(
                    f"data length {arr.size} does not match shape {dims}"
                )
            arr = arr.reshape(dims)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"dimensions must be >= 1, got {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        arr.flags.writeable = False
        self._array = arr

    @property
    def array(self) -> np.ndarray:
        """Read-only float32 view of the underlying data."""
        return self._array

    @property
    def shape(self) -> Shape:
        return self._array.shape

    @property
    def rank(self) -> int:
        return self._array.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self._array, other._array)
        )

    def __hash__(self):
        return hash((self.shape, self._array.tobytes()))

    def tolist(self) -> list:
        return self._array.tolist()


def tensor(data, shape: Sequence[int] | None = None) -> Tensor:
    """Shorthand constructor, mirroring ``Tensor(data, shape)``."""
    return Tensor(data, shape)


def require_rank(t: Tensor, rank: int, what: str = "tensor") -> None:
    if t.rank != rank:
        raise ShapeError(f"{what} must have rank {rank}, got rank {t.rank}")


def spatial_mean(t: Tensor) -> Tensor:
    """Global average pool: mean over height and width per (batch, channel).

    Accumulates in float64 and rounds once to float32.
    """
    require_rank(t, 4, "spatial_mean input")
    out = t.array.mean(axis=(2, 3), dtype=np.float64)
    return Tensor(out.astype(np.float32))


def minmax_normalize(m: Tensor) -> Tensor:
    """Affinely rescale a rank-2 map onto [0, 1].

    A constant map (max == min) maps to all zeros instead of raising;
    constant saliency carries no signal and must not abort batch runs.
    """
    require_rank(m, 2, "minmax_normalize input")
    a = m.array.astype(np.float64)
    lo = a.min()
    hi = a.max()
    if hi == lo:
        return Tensor(np.zeros(m.shape, dtype=np.float32))
    out = (a - lo) / (hi - lo)
    return Tensor(out.astype(np.float32))


def bilinear_resize(m: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resample a rank-2 map to ``out_h`` x ``out_w`` bilinearly.

    Uses half-pixel-center mapping: src = (dst + 0.5) * scale - 0.5,
    clamped to the valid range (the align-corners-off convention).
    Resizing to the input size returns the map unchanged, bit-exact.
    """
    require_rank(m, 2, "bilinear_resize input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got {out_h}x{out_w}")
    in_h, in_w = m.shape
    if (out_h, out_w) == (in_h, in_w):
        return m

    src = m.array.astype(np.float64)

    def axis_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        scale = n_in / n_out
        x = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
        x = np.clip(x, 0.0, n_in - 1)
        lo = np.floor(x).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, x - lo

    r0, r1, fr = axis_coords(out_h, in_h)
    c0, c1, fc = axis_coords(out_w, in_w)

    top = src[np.ix_(r0, c0)] * (1.0 - fc) + src[np.ix_(r0, c1)] * fc
    bot = src[np.ix_(r1, c0)] * (1.0 - fc) + src[np.ix_(r1, c1)] * fc
    out = top * (1.0 - fr[:, None]) + bot * fr[:, None]
    return Tensor(out.astype(np.float32))
