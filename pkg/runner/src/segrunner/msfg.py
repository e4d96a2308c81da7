"""MSFG feature-grid files, the tensor half of the bridge protocol.

Layout (little-endian): 4-byte magic "MSFG", then seven u32 fields
(version=1, rows, cols, dim, patch_size, source height, source width),
then rows*cols*dim float32 values, row-major.  Self-describing and
parseable from any language, which is the point: the client re-reads
everything this process writes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSFG"
VERSION = 1
HEADER = struct.Struct("<4s7I")


class MsfgFormatError(ValueError):
    """File is not a readable MSFG grid (bad magic, version, or size)."""


def write_grid(
    path: str | Path,
    features: np.ndarray,
    patch_size: int,
    source_dims: tuple[int, int],
) -> None:
    """Write a (rows, cols, dim) float array as an MSFG file."""
    if features.ndim != 3:
        raise ValueError(f"features must be (rows, cols, dim), got shape {features.shape}")
    rows, cols, dim = features.shape
    src_h, src_w = source_dims
    header = HEADER.pack(MAGIC, VERSION, rows, cols, dim, patch_size, src_h, src_w)
    payload = np.ascontiguousarray(features, dtype="<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_grid(path: str | Path) -> tuple[np.ndarray, int, tuple[int, int]]:
    """Read an MSFG file back as ((rows, cols, dim) float32, patch_size, source_dims)."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise MsfgFormatError(f"{path}: {len(raw)} bytes is shorter than the {HEADER.size}-byte header")
    magic, version, rows, cols, dim, patch_size, src_h, src_w = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MsfgFormatError(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != VERSION:
        raise MsfgFormatError(f"{path}: version {version}, this reader supports {VERSION}")
    expected = HEADER.size + 4 * rows * cols * dim
    if len(raw) != expected:
        raise MsfgFormatError(
            f"{path}: {len(raw)} bytes, header promises {expected} ({rows}x{cols}x{dim} float32)"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(rows, cols, dim).copy()
    return data, patch_size, (src_h, src_w)
