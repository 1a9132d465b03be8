"""Binary PGM (P5, maxval 255) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


def quantize(img: np.ndarray) -> np.ndarray:
    """Gray values in [0, 1] -> uint8 via round(v * 255), clamped."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> Path:
    """Write a 2-D uint8 array (class indices or quantised gray levels)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise PGMError(f"PGM needs a 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255 or not np.all(img == np.rint(img)):
            raise PGMError("PGM values must be integers in [0, 255]; quantize gray images first")
        img = img.astype(np.uint8)
    h, w = img.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes())
    return path


def write_gray(path, img: np.ndarray) -> Path:
    return write_pgm(path, quantize(img))


def parse_pgm(data: bytes) -> np.ndarray:
    if data[:2] != b"P5":
        raise PGMError(f"bad magic {data[:2]!r} at offset 0 (expected b'P5')")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise PGMError(f"bad header field {tok!r} at offset {start}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise PGMError(f"maxval {maxval} at header is unsupported (need 255)")
    pos += 1  # single whitespace byte before the raster
    if len(data) - pos != w * h:
        raise PGMError(f"raster at offset {pos} has {len(data) - pos} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w).copy()


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())
