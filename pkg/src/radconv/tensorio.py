"""RADT tensor dump format.

Layout: magic bytes ``RADT``, one format-version byte (currently 1), three
unsigned 32-bit little-endian dimensions ``(channels, height, width)``, then
``channels * height * width`` little-endian IEEE-754 doubles in channel-major
row-major order (the in-memory layout of :class:`~radconv.numerics.FeatureMap`).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .numerics import FeatureMap

__all__ = ["MAGIC", "FORMAT_VERSION", "save_radt", "load_radt"]

MAGIC = b"RADT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBIII")


def save_radt(fmap: FeatureMap, path) -> None:
    """Write a feature map to ``path`` in the RADT dump format."""
    payload = fmap.data.astype("<f8", copy=False).tobytes(order="C")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, fmap.channels, fmap.height, fmap.width)
    Path(path).write_bytes(header + payload)


def load_radt(path) -> FeatureMap:
    """Read a RADT dump back into a feature map."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated RADT header")
    magic, version, channels, height, width = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    count = channels * height * width
    expected = _HEADER.size + 8 * count
    if len(blob) != expected:
        raise ValueError(
            f"{path}: payload size mismatch, expected {expected} bytes, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size, count=count)
    return FeatureMap(data.reshape(channels, height, width).astype(np.float64))
