"""Binary greyscale PGM (P5, maxval 255) reading and writing."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_TOKEN = re.compile(rb"(?:\s|#[^\n\r]*[\n\r])*(\S+)")


class PGMError(ValueError):
    pass


def decode_pgm(data: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PGMError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, width, height, maxval = tokens
    if magic != b"P5":
        raise PGMError(f"unsupported magic {magic!r}; only binary P5 is handled")
    try:
        w, h, maxval = int(width), int(height), int(maxval)
    except ValueError:
        raise PGMError("non-numeric PGM header field") from None
    if w < 1 or h < 1:
        raise PGMError(f"bad dimensions {w}x{h}")
    if maxval != 255:
        raise PGMError(f"maxval {maxval} unsupported; expected 255")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PGMError("missing whitespace after maxval")
    raster = data[pos + 1 : pos + 1 + w * h]
    if len(raster) != w * h:
        raise PGMError(f"expected {w * h} raster bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def encode_pgm(image) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise PGMError("expected a 2-D uint8 image")
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, image) -> None:
    Path(path).write_bytes(encode_pgm(image))
