"""Image representation, lossless PNG I/O, and the crop/resize preprocessing step.

Internal pixel scale is the unit interval; the 0..255 byte scale only exists
at the PNG boundary (``load_image``/``save_image``/``encode_png``/``decode_png``).
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ImageFormatError, ImageIOError, ImageShapeError

log = logging.getLogger(__name__)

MIN_SIDE = 8
MAX_BYTE = 255.0
# Pillow raw modes of 8-bit grayscale / RGB PNG payloads.
_SUPPORTED_RAWMODES = {"L", "RGB"}

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """H×W×C raster of unit-interval intensities (C is 1 or 3).

    The backing array is copied to float64 and made read-only.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ImageShapeError(f"expected H×W×C with C in {{1,3}}, got shape {arr.shape}")
        if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
            raise ImageShapeError(
                f"image must be at least {MIN_SIDE}×{MIN_SIDE}, got {arr.shape[0]}×{arr.shape[1]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ImageShapeError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ImageShapeError("image values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def to_bytes(self) -> bytes:
        """Quantized 8-bit payload, row-major (used for digests)."""
        return _to_uint8(self.data).tobytes()


def _to_uint8(data: np.ndarray) -> np.ndarray:
    # round-half-up: 0.5 -> 128
    return np.clip(np.floor(data * MAX_BYTE + 0.5), 0, 255).astype(np.uint8)


def _from_pil(pil: Image.Image, source: str) -> ImageTensor:
    if pil.format != "PNG":
        raise ImageFormatError(f"{source}: not a PNG file (format={pil.format})")
    if pil.mode in ("RGBA", "LA", "PA") or "transparency" in pil.info:
        raise ImageFormatError(f"{source}: alpha channels are not supported")
    if pil.mode not in ("L", "RGB"):
        raise ImageFormatError(f"{source}: unsupported color mode {pil.mode!r}")
    rawmode = pil.tile[0][3] if pil.tile else pil.mode
    if rawmode not in _SUPPORTED_RAWMODES:
        raise ImageFormatError(f"{source}: unsupported bit depth (raw mode {rawmode!r})")
    arr = np.asarray(pil, dtype=np.float64) / MAX_BYTE
    return ImageTensor(arr)


def load_image(path: PathLike) -> ImageTensor:
    """Load an 8-bit grayscale or RGB PNG; byte v maps to v/255 exactly."""
    p = Path(path)
    if not p.is_file():
        raise ImageIOError(f"image file not found: {p}", path=str(p))
    try:
        with Image.open(p) as pil:
            return _from_pil(pil, str(p))
    except UnidentifiedImageError as e:
        raise ImageFormatError(f"{p}: not a readable image") from e


def decode_png(payload: bytes) -> ImageTensor:
    """In-memory counterpart of :func:`load_image`."""
    try:
        with Image.open(io.BytesIO(payload)) as pil:
            return _from_pil(pil, "<bytes>")
    except UnidentifiedImageError as e:
        raise ImageFormatError("payload is not a readable image") from e


def _to_pil(img: ImageTensor) -> Image.Image:
    raw = _to_uint8(img.data)
    if img.channels == 1:
        return Image.fromarray(raw[:, :, 0])
    return Image.fromarray(raw)


def encode_png(img: ImageTensor) -> bytes:
    buf = io.BytesIO()
    _to_pil(img).save(buf, format="PNG")
    return buf.getvalue()


def save_image(img: ImageTensor, path: PathLike) -> None:
    """Write ``img`` as an 8-bit PNG (round(v·255), half-up)."""
    p = Path(path)
    try:
        _to_pil(img).save(p, format="PNG")
    except OSError as e:
        raise ImageIOError(f"cannot write image to {p}: {e}", path=str(p)) from e
    log.debug("Wrote %s (%d×%d×%d)", p, img.height, img.width, img.channels)


def quantize(img: ImageTensor) -> ImageTensor:
    """The save→load round trip without touching disk."""
    return ImageTensor(_to_uint8(img.data).astype(np.float64) / MAX_BYTE)


def _bilinear_axis_coords(src: int, dst: int) -> np.ndarray:
    # Half-pixel centers: output i samples input (i + 0.5) * src/dst - 0.5.
    coords = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    return np.clip(coords, 0.0, src - 1)


def center_crop_resize(img: ImageTensor, size: int) -> ImageTensor:
    """Crop the centered largest square, then bilinearly resize to size×size.

    Odd leftovers go to the bottom/right, i.e. the crop leans top-left.
    """
    if size < MIN_SIDE:
        raise ImageShapeError(f"target size must be >= {MIN_SIDE}, got {size}")
    side = min(img.height, img.width)
    if size > side:
        raise ImageShapeError(f"target size {size} exceeds the largest square crop {side}")
    top = (img.height - side) // 2
    left = (img.width - side) // 2
    square = img.data[top:top + side, left:left + side, :]
    if side == size:
        return ImageTensor(square)

    ys = _bilinear_axis_coords(side, size)
    xs = _bilinear_axis_coords(side, size)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    channels = [
        ndimage.map_coordinates(square[:, :, c], [grid_y, grid_x], order=1, mode="nearest")
        for c in range(img.channels)
    ]
    out = np.clip(np.stack(channels, axis=-1), 0.0, 1.0)
    return ImageTensor(out)
