"""Binary greyscale PGM (P5, maxval 255) reading and writing."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import FormatError


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] onto 0..255 with round-half-up, clamping out-of-range values."""
    v = np.clip(np.asarray(values, np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def encode_pgm(values: np.ndarray) -> bytes:
    img = to_bytes(values)
    if img.ndim != 2:
        raise FormatError(f"PGM needs a 2-D image, got shape {img.shape}")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def write_pgm(path, values: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(values))


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.asarray(mask, bool).astype(np.float64))


_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def decode_pgm(data: bytes) -> np.ndarray:
    m = _HEADER.match(data)
    if not m:
        raise FormatError("not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise FormatError("16-bit PGM is not supported")
    body = data[m.end():m.end() + w * h]
    if len(body) != w * h:
        raise FormatError("truncated PGM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 0
