"""Image decode, model preprocessing, heatmap rendering, PNG output.

Rendering uses two documented ramps instead of a framework colormap so
outputs are reproducible byte-for-byte: a blue-to-red ramp for plain
magnitude maps, and a red/green pair for signed maps where red marks
regions pulling the output toward the contrast target and green marks
regions defending the current prediction.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageFormatError, ShapeError
from .model import InputSpec
from .tensor import Tensor, bilinear_resize

from .cam import SaliencyMap

_DECODABLE_FORMATS = {"PNG", "PPM"}
_CONVERTIBLE_MODES = {"RGB", "RGBA", "L", "P"}


class ImageBuffer:
    """8-bit RGB raster, row-major."""

    __slots__ = ("_array",)

    def __init__(self, array: np.ndarray) -> None:
        arr = np.ascontiguousarray(array)
        if arr.dtype != np.uint8:
            raise ImageFormatError(f"image buffer must be uint8, got {arr.dtype}")
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageFormatError(f"image buffer must be HxWx3, got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageFormatError("image buffer has an empty dimension")
        arr.setflags(write=False)
        object.__setattr__(self, "_array", arr)

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def height(self) -> int:
        return self._array.shape[0]

    @property
    def width(self) -> int:
        return self._array.shape[1]

    @property
    def pixels(self) -> bytes:
        return self._array.tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self._array.shape == other._array.shape and bool((self._array == other._array).all())

    def __hash__(self) -> int:
        return hash((self._array.shape, self.pixels))

    def __repr__(self) -> str:
        return f"ImageBuffer({self.width}x{self.height})"


@dataclass(frozen=True)
class RenderSpec:
    """Overlay controls: colormap mode, blend strength, value gain."""

    mode: str = "sequential"
    alpha: float = 0.5
    boost: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("sequential", "signed"):
            raise ValueError(f"unknown render mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.boost > 0:
            raise ValueError(f"boost must be > 0, got {self.boost}")


def decode_image(data: bytes) -> ImageBuffer:
    """Decode PNG or binary PPM bytes to RGB. Alpha is dropped;
    paletted and grayscale files are expanded to RGB."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageFormatError(f"could not decode image: {exc}") from exc
    if img.format not in _DECODABLE_FORMATS:
        raise ImageFormatError(f"unsupported image format {img.format!r}; expected PNG or PPM")
    if img.mode not in _CONVERTIBLE_MODES:
        raise ImageFormatError(f"unsupported pixel mode {img.mode!r}")
    rgb = img.convert("RGB")
    return ImageBuffer(np.asarray(rgb, dtype=np.uint8))


def resize_buffer(img: ImageBuffer, height: int, width: int) -> ImageBuffer:
    """Bilinear resize of the raw pixels, rounded half-up per channel."""
    if (img.height, img.width) == (height, width):
        return img
    out = np.empty((height, width, 3), dtype=np.uint8)
    for c in range(3):
        chan = bilinear_resize(Tensor(img.array[:, :, c].astype(np.float32)), height, width)
        out[:, :, c] = np.clip(np.floor(chan.array.astype(np.float64) + 0.5), 0, 255).astype(np.uint8)
    return ImageBuffer(out)


def preprocess_buffer(img: ImageBuffer, spec: InputSpec) -> Tensor:
    """Resize to the model resolution, then (x/255 - mean)/std per channel.

    Three-channel models consume RGB directly; one-channel models consume
    the per-pixel channel mean.
    """
    c, h, w = spec.shape
    arr = img.array.astype(np.float32)
    if c == 3:
        chans = [arr[:, :, i] for i in range(3)]
    elif c == 1:
        chans = [arr.astype(np.float64).mean(axis=2).astype(np.float32)]
    else:
        raise ShapeError(f"cannot map an RGB image onto {c} input channels")
    resized = np.stack([bilinear_resize(Tensor(ch), h, w).array for ch in chans])
    x = resized.astype(np.float64) / 255.0
    mean = np.asarray(spec.mean, dtype=np.float64)[:, None, None]
    std = np.asarray(spec.std, dtype=np.float64)[:, None, None]
    return Tensor(((x - mean) / std)[None].astype(np.float32))


def load_and_preprocess(image_bytes: bytes, spec: InputSpec) -> Tensor:
    return preprocess_buffer(decode_image(image_bytes), spec)


def _blend(base: np.ndarray, color: np.ndarray, alpha: np.ndarray | float) -> np.ndarray:
    out = (1.0 - alpha) * base.astype(np.float64) + alpha * color
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def render(saliency: SaliencyMap, base: ImageBuffer, spec: RenderSpec | None = None) -> ImageBuffer:
    """Overlay a saliency map on an image.

    sequential: value v (clamped to [0,1] after boost) maps to the ramp
    (255v, 0, 255(1-v)) and is alpha-blended everywhere.
    signed: magnitudes are scaled by the map's max |value|, boosted with
    saturation, and blended with strength alpha*m on the red (positive)
    or green (negative) ramp; zero-valued pixels keep the base exactly.
    """
    spec = spec or RenderSpec()
    vals = saliency.values.array.astype(np.float64)
    if vals.shape != (base.height, base.width):
        raise ShapeError(f"map is {vals.shape}, base image is {(base.height, base.width)}")

    if spec.mode == "sequential":
        v = np.clip(vals * spec.boost, 0.0, 1.0)
        color = np.stack([255.0 * v, np.zeros_like(v), 255.0 * (1.0 - v)], axis=2)
        return ImageBuffer(_blend(base.array, color, spec.alpha))

    peak = float(np.abs(vals).max())
    if peak == 0.0:
        return base
    m = np.minimum(np.abs(vals) * spec.boost / peak, 1.0)
    color = np.zeros((base.height, base.width, 3), dtype=np.float64)
    color[:, :, 0] = np.where(vals > 0, 255.0, 0.0)
    color[:, :, 1] = np.where(vals < 0, 255.0, 0.0)
    return ImageBuffer(_blend(base.array, color, (spec.alpha * m)[:, :, None]))


def write_png(img: ImageBuffer, path: str | os.PathLike) -> None:
    """Write an 8-bit RGB PNG atomically: the file appears only complete."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        Image.fromarray(np.asarray(img.array), mode="RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_png(img: ImageBuffer) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img.array), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
