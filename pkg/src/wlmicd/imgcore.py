"""Image, histogram and mask primitives shared by every stage.

Images are plain 2D ``numpy.uint8`` arrays indexed ``[row, col]``; masks are
2D boolean arrays of the same shape. Arithmetic that can leave the 0-255
range (differences, squared errors, information measures) is always carried
out on widened copies.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage

PathLike = Union[str, os.PathLike]

N_LEVELS = 256
OVERLAY_TINT = (255, 0, 0)


class ImageFormatError(ValueError):
    """Raised when a file cannot be decoded as an 8-bit grayscale image."""


class BitDepthError(ImageFormatError):
    """The file decodes, but not at 8 bits per sample."""


class ChannelCountError(ImageFormatError):
    """The file decodes, but carries more than one channel."""


class ShapeMismatchError(ValueError):
    """Two arrays that must share a frame do not."""


# Pillow modes that are single channel but not 8-bit.
_WRONG_DEPTH_MODES = {"1", "I", "I;16", "I;16B", "I;16L", "I;16N", "F"}


def as_image(data) -> np.ndarray:
    """Validate ``data`` as an image and return it as a 2D uint8 array."""
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must be a non-empty 2D array, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr
    if arr.dtype == bool or not np.issubdtype(arr.dtype, np.number):
        raise ValueError(f"image must hold integer intensities, got dtype {arr.dtype}")
    if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
        raise ValueError("image intensities must be integral")
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("image intensities must lie in [0, 255]")
    return arr.astype(np.uint8)


def as_mask(data, shape: tuple[int, int] | None = None) -> np.ndarray:
    mask = np.asarray(data).astype(bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {mask.shape}")
    if shape is not None and mask.shape != tuple(shape):
        raise ShapeMismatchError(f"mask shape {mask.shape} does not match frame {tuple(shape)}")
    return mask


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def load_image(path: PathLike) -> np.ndarray:
    """Read an 8-bit single-channel PGM or PNG with exact pixel values.

    Raises:
        ImageFormatError: the file is missing or cannot be decoded.
        BitDepthError: the file is single channel but not 8-bit.
        ChannelCountError: the file has color or alpha channels.
    """
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in _WRONG_DEPTH_MODES:
                raise BitDepthError(f"{path}: unsupported bit depth (mode {mode!r}); need 8-bit")
            if mode != "L":
                raise ChannelCountError(
                    f"{path}: expected one grayscale channel, got mode {mode!r} "
                    f"with {len(im.getbands())} band(s)"
                )
            return np.array(im, dtype=np.uint8)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        raise ImageFormatError(f"{path}: cannot read file ({exc})") from exc
    except PILImage.UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a PGM or PNG image") from exc


def save_image(img, path: PathLike) -> None:
    """Write an image as binary PGM (``.pgm``) or 8-bit gray PNG (anything else)."""
    arr = as_image(img)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else "PNG"
    _atomic_save(PILImage.fromarray(arr), path, fmt)


def save_mask(mask, path: PathLike) -> None:
    """Write a mask as a 0/255 grayscale image."""
    save_image(as_mask(mask).astype(np.uint8) * 255, path)


def load_mask(path: PathLike) -> np.ndarray:
    """Read a mask image; any nonzero pixel is flagged."""
    return load_image(path) > 0


def _atomic_save(im: PILImage.Image, path: Path, fmt: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        im.save(tmp, format=fmt)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def histogram(img) -> np.ndarray:
    """Return 256 bin counts, ``bins[v]`` = number of pixels with intensity ``v``."""
    arr = as_image(img)
    return np.bincount(arr.ravel(), minlength=N_LEVELS).astype(np.int64)


def difference(a, b) -> np.ndarray:
    """Signed per-pixel difference ``a - b`` as int16, range [-255, 255]."""
    a = as_image(a)
    b = as_image(b)
    check_same_shape(a, b)
    return a.astype(np.int16) - b.astype(np.int16)


def overlay_rgb(base, mask) -> np.ndarray:
    """Promote ``base`` to RGB and tint the flagged pixels.

    Tinted pixels become ``(255, v // 2, v // 2)``, which is never gray, so the
    flagged set can be recovered from the output by checking ``r == g == b``.
    """
    base = as_image(base)
    mask = as_mask(mask, base.shape)
    rgb = np.repeat(base[:, :, None], 3, axis=2)
    half = base[mask] // 2
    rgb[mask, 0] = OVERLAY_TINT[0]
    rgb[mask, 1] = half
    rgb[mask, 2] = half
    return rgb


def save_overlay(base, mask, path: PathLike) -> None:
    """Write an RGB PNG of ``base`` with the ``mask`` pixels tinted red."""
    rgb = overlay_rgb(base, mask)
    path = Path(path)
    if not path.parent.exists():
        raise OSError(f"{path}: parent directory does not exist")
    _atomic_save(PILImage.fromarray(rgb), path, "PNG")
