"""Image and mask value types plus the pixel algebra the pipeline is built on.

All types are immutable after construction (arrays are locked read-only), so
instances can be shared freely between threads. Operations are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DataError

# ITU-R 601 luma weights used for RGB -> gray conversion.
_LUMA = (0.299, 0.587, 0.114)


def _locked(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel raster, float64 intensities in [0, 1], row-major."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True, order="C")
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"image data must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _locked(arr))

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "GrayImage":
        # Trusted fast path for hot loops; caller guarantees dtype, shape and range.
        obj = object.__new__(cls)
        object.__setattr__(obj, "data", _locked(arr))
        return obj

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit three-channel raster, shape (height, width, 3), dtype uint8."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.uint8, copy=True, order="C")
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.size == 0:
            raise ValueError(f"rgb data must have shape (H, W, 3), got {arr.shape}")
        object.__setattr__(self, "data", _locked(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean raster matching the image it annotates; True marks foreground."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.bits, copy=True, order="C")
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                raise ValueError("mask bits must be boolean or 0/1")
            arr = arr.astype(bool)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"mask bits must be a non-empty 2-D array, got shape {arr.shape}")
        object.__setattr__(self, "bits", _locked(arr))

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "BinaryMask":
        obj = object.__new__(cls)
        object.__setattr__(obj, "bits", _locked(arr))
        return obj

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def is_empty(self) -> bool:
        return not self.bits.any()

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        _check_same_shape(self, other)
        return BinaryMask._wrap(self.bits & other.bits)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        _check_same_shape(self, other)
        return BinaryMask._wrap(self.bits | other.bits)

    def bounding_box(self) -> "Rect":
        """Tight bounding box of the foreground; raises on an empty mask."""
        if self.is_empty():
            raise ValueError("empty mask has no bounding box")
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return Rect(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle: x in [x0, x1), y in [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"degenerate rectangle {(self.x0, self.y0, self.x1, self.y1)}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def _check_same_shape(a, b) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def apply_mask(image: GrayImage, mask: BinaryMask, fill: float = 0.0) -> GrayImage:
    """Keep pixels where the mask is set, replace the rest with ``fill``."""
    _check_same_shape(image, mask)
    if not (0.0 <= fill <= 1.0):
        raise ValueError(f"fill intensity {fill} outside [0, 1]")
    return GrayImage._wrap(np.where(mask.bits, image.data, np.float64(fill)))


def scale_mask_about_centroid(mask: BinaryMask, area_factor: float) -> BinaryMask:
    """Grow the foreground about its centroid so its area scales by ``area_factor``.

    Offsets from the centroid scale by sqrt(area_factor). Rasterization is an
    inverse nearest-neighbour warp (a target pixel is set when it maps back
    inside the source mask), followed by a morphological closing so the region
    stays connected across rasterization gaps. Pixels scaled past the image
    border are clipped. ``area_factor`` 1.0 is the identity.
    """
    if mask.is_empty():
        raise ValueError("cannot scale an empty mask")
    if area_factor < 1.0:
        raise ValueError(f"area_factor must be >= 1, got {area_factor}")
    if area_factor == 1.0:
        return mask

    rows, cols = np.nonzero(mask.bits)
    cy = float(rows.mean())
    cx = float(cols.mean())
    lin = math.sqrt(area_factor)

    h, w = mask.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    src_y = np.floor(cy + (yy - cy) / lin + 0.5).astype(np.int64)
    src_x = np.floor(cx + (xx - cx) / lin + 0.5).astype(np.int64)
    inside = (src_y >= 0) & (src_y < h) & (src_x >= 0) & (src_x < w)
    scaled = np.zeros((h, w), dtype=bool)
    scaled[inside] = mask.bits[src_y[inside], src_x[inside]]

    # Close with a padded border so the closing cannot eat pixels at the edge.
    padded = np.pad(scaled, 2)
    closed = ndimage.binary_closing(padded)[2:-2, 2:-2]
    return BinaryMask._wrap(scaled | closed)


def shift_mask_down(mask: BinaryMask, h: int) -> BinaryMask:
    """Move every set bit down by ``h`` rows; bits pushed past the bottom are dropped."""
    if h < 0:
        raise ValueError(f"shift must be >= 0, got {h}")
    out = np.zeros(mask.shape, dtype=bool)
    if h < mask.height:
        out[h:, :] = mask.bits[: mask.height - h, :]
    return BinaryMask._wrap(out)


def _decode_to_gray_array(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                return np.asarray(im, dtype=np.float64) / 255.0
            if im.mode in ("I", "I;16"):
                arr = np.asarray(im, dtype=np.float64)
                return arr / 65535.0
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileNotFoundError as e:
        raise DataError(f"image file not found: {path}") from e
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from e
    gray = _LUMA[0] * rgb[..., 0] + _LUMA[1] * rgb[..., 1] + _LUMA[2] * rgb[..., 2]
    return gray / 255.0


def load_image(path: str | Path) -> GrayImage:
    """Load a PNG (or other raster file) as a grayscale image.

    Color inputs are converted with the 0.299/0.587/0.114 luma weights.
    """
    arr = _decode_to_gray_array(Path(path))
    return GrayImage._wrap(np.ascontiguousarray(np.clip(arr, 0.0, 1.0)))


def load_mask(path: str | Path, threshold: float = 0.5) -> BinaryMask:
    """Load a mask PNG; pixels with intensity above ``threshold`` are foreground."""
    arr = _decode_to_gray_array(Path(path))
    return BinaryMask._wrap(arr > threshold)


def save_image(image: GrayImage | RgbImage, path: str | Path) -> None:
    """Write an 8-bit grayscale or 24-bit RGB PNG."""
    path = Path(path)
    if isinstance(image, GrayImage):
        quantized = np.rint(image.data * 255.0).astype(np.uint8)
        Image.fromarray(quantized, mode="L").save(path, format="PNG")
    elif isinstance(image, RgbImage):
        Image.fromarray(image.data, mode="RGB").save(path, format="PNG")
    else:
        raise TypeError(f"cannot save object of type {type(image).__name__}")


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask PNG with foreground 255 and background 0."""
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(Path(path), format="PNG")
