"""Raster I/O, validation helpers and connected-component labelling.

Images are plain numpy arrays addressed as ``(row, col)`` with the origin at
the top-left corner:

* grey images are 2-D ``uint8`` arrays of at least 3x3 pixels,
* float planes are 2-D ``float64`` (or ``float32``) arrays,
* masks are 2-D ``bool`` arrays.

Binary PGM (P5) and PPM (P6) are read and written by this module directly;
everything else (PNG, TIFF, GIF, ...) goes through Pillow.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .exceptions import (
    DimensionMismatch,
    EmptyMask,
    UnreadableFile,
    UnsupportedFormat,
    ValidationError,
    WriteFailure,
    ZeroDimension,
)

CHANNEL_POLICIES = ("green", "luminance", "as-is")

_NETPBM_MAGIC = {b"P5": 1, b"P6": 3}


def check_image(image, min_size=3):
    """Validate a grey image and return it as a 2-D ``uint8`` array."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D grey image, got shape {arr.shape}")
    if arr.shape[0] < min_size or arr.shape[1] < min_size:
        raise ZeroDimension(
            f"image must be at least {min_size}x{min_size}, got {arr.shape}"
        )
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.number):
            raise ValidationError(f"unsupported image dtype {arr.dtype}")
        if np.any(arr < 0) or np.any(arr > 255) or np.any(arr != np.round(arr)):
            raise ValidationError("grey image values must be integers in 0..255")
        arr = arr.astype(np.uint8)
    return arr


def check_mask(mask, shape=None, name="mask"):
    """Validate a binary mask, optionally against an expected shape."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr.astype(bool, copy=False)


def _read_netpbm(data, path):
    magic = data[:2]
    channels = _NETPBM_MAGIC[magic]
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise UnreadableFile(f"{path}: malformed netpbm header")
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise UnreadableFile(f"{path}: malformed netpbm header")
    pos += 1
    width, height, maxval = fields
    if width == 0 or height == 0:
        raise ZeroDimension(f"{path}: zero-sized raster")
    if maxval > 255 or maxval == 0:
        raise UnsupportedFormat(f"{path}: only 8-bit netpbm rasters are supported")
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise UnreadableFile(
            f"{path}: truncated payload ({len(payload)} of {expected} bytes)"
        )
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def _read_with_pillow(path):
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "1", "P"):
                im = im.convert("L") if mode != "P" else _palette_to_array(im)
            elif mode in ("RGB", "RGBA", "CMYK", "YCbCr", "LA"):
                im = im.convert("RGB")
            else:
                raise UnsupportedFormat(f"{path}: unsupported raster mode {mode!r}")
            arr = np.asarray(im, dtype=np.uint8).copy()
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(f"{path}: unrecognised raster format") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, UnsupportedFormat):
            raise
        raise UnreadableFile(f"{path}: {exc}") from exc
    return arr


def _palette_to_array(im):
    # palette images (GIF masks) whose palette is grey map straight to L;
    # coloured palettes are expanded to RGB
    rgb = im.convert("RGB")
    arr = np.asarray(rgb)
    if np.array_equal(arr[..., 0], arr[..., 1]) and np.array_equal(arr[..., 1], arr[..., 2]):
        return im.convert("L")
    return rgb


def read_raster(path):
    """Read a raster file as ``(H, W)`` or ``(H, W, 3)`` uint8 array."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc.strerror or exc}") from exc
    if len(data) == 0:
        raise UnreadableFile(f"{path}: empty file")
    if data[:2] in _NETPBM_MAGIC:
        arr = _read_netpbm(data, path)
    else:
        arr = _read_with_pillow(path)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ZeroDimension(f"{path}: zero-sized raster")
    return arr


def to_gray(arr, channel_policy="green"):
    """Reduce a raster array to a single channel."""
    if channel_policy not in CHANNEL_POLICIES:
        raise ValidationError(f"unknown channel policy {channel_policy!r}")
    if arr.ndim == 2:
        return arr
    if channel_policy == "as-is":
        raise ValidationError("as-is channel policy needs a single-channel raster")
    if channel_policy == "green":
        return np.ascontiguousarray(arr[..., 1])
    rgb = arr[..., :3].astype(np.float64)
    lum = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(lum + 0.5), 0, 255).astype(np.uint8)


def load_image(path, channel_policy="green"):
    """Load a grey image.

    Parameters
    ----------
    path : str or path-like
        PGM/PPM, or any raster Pillow understands (PNG, TIFF, GIF).
    channel_policy : {"green", "luminance", "as-is"}
        How to reduce three-channel rasters. Single-channel rasters are
        returned unchanged under "green" and "luminance".

    Returns
    -------
    ndarray of uint8, shape (H, W)
    """
    gray = to_gray(read_raster(path), channel_policy)
    return check_image(gray)


def load_mask(path):
    """Load a binary mask; any non-zero pixel is foreground."""
    arr = read_raster(path)
    if arr.ndim == 3:
        arr = arr.max(axis=2)
    return arr > 0


def save_image(image, path):
    """Write a 2-D uint8 array as binary PGM (P5, maxval 255)."""
    arr = np.ascontiguousarray(check_image(image, min_size=1))
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    try:
        with open(os.fspath(path), "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes())
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc.strerror or exc}") from exc


def save_mask(mask, path):
    """Write a mask as P5 with vessel = 255 and background = 0."""
    arr = check_mask(mask)
    save_image(np.where(arr, 255, 0).astype(np.uint8), path)


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def connected_components(mask, connectivity=8):
    """Label the connected components of a mask.

    Returns
    -------
    labels : ndarray of int32
        0 for background, 1..N for components. Ids are assigned in the
        row-major order of each component's first pixel.
    counts : ndarray of int64, shape (N + 1,)
        ``counts[i]`` is the pixel count of component ``i``; ``counts[0]`` is 0.
    """
    if connectivity not in _STRUCTURES:
        raise ValidationError("connectivity must be 4 or 8")
    arr = check_mask(mask)
    labels, n = ndimage.label(arr, structure=_STRUCTURES[connectivity])
    labels = labels.astype(np.int32, copy=False)
    counts = np.bincount(labels.ravel(), minlength=n + 1).astype(np.int64)
    counts[0] = 0
    return labels, counts


def largest_component(mask):
    """Pixels of the largest 8-connected component.

    Ties go to the component containing the smallest row-major index.
    """
    labels, counts = connected_components(mask, 8)
    if len(counts) <= 1:
        raise EmptyMask("mask has no foreground pixels")
    # ids follow first-pixel raster order, so argmax's first hit breaks ties
    best = int(np.argmax(counts[1:])) + 1
    return labels == best
