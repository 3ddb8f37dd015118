"""PNG and dense-raster file io."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError

RASTER_MAGIC = b"CVDM"
_HEADER = struct.Struct("<4sIII")  # magic, width, height, channels -> 16 bytes


def write_png(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("PNG export expects uint8 data")
    Image.fromarray(array).save(Path(path), format="PNG", optimize=False)


def read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ParseError("image file not found", path)
    with Image.open(path) as img:
        if img.mode not in ("RGB", "L", "RGBA"):
            img = img.convert("RGB")
        return np.array(img)


def write_dense_raster(path, points: np.ndarray) -> None:
    """Write an ``(H, W, 3)`` float plane as little-endian float32.

    The 16-byte header is ``magic, width, height, channels``.
    """
    points = np.asarray(points)
    h, w, c = points.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RASTER_MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(points, dtype="<f4").tobytes())


def read_dense_raster(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ParseError("dense raster not found", path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError("truncated header", path)
    magic, w, h, c = _HEADER.unpack_from(data)
    if magic != RASTER_MAGIC:
        raise ParseError(f"bad magic {magic!r}", path)
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != w * h * c:
        raise ParseError(f"expected {w * h * c} floats, found {body.size}", path)
    return body.reshape(h, w, c).astype(np.float32)
