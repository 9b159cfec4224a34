"""Binary PPM (P6, maxval 255) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, pos = [], 0
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DataError("truncated PPM header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        out.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DataError("missing whitespace after PPM header")
    return out, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode P6 bytes into an ``(H, W, 3)`` uint8 array."""
    (magic, w, h, maxval), offset = _tokens(data, 4)
    if magic != b"P6":
        raise DataError(f"not a P6 PPM (magic {magic!r})")
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DataError(f"bad PPM header: {exc}") from None
    if width < 1 or height < 1:
        raise DataError(f"PPM has empty dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"only maxval 255 is supported, got {maxval}")
    need = width * height * 3
    raster = data[offset:offset + need]
    if len(raster) != need:
        raise DataError(f"PPM raster truncated: {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise DataError(f"expected (H, W, 3) uint8 pixels, got {pixels.shape} {pixels.dtype}")
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels).tobytes()


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    try:
        return decode_ppm(path.read_bytes())
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None


def write_ppm(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(pixels))
