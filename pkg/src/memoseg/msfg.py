"""On-disk formats: the MSFG feature-grid container and 8-bit PNG masks.

MSFG layout (little-endian):

    offset  size  field
    0       4     magic b"MSFG"
    4       4     u32 format version (currently 1)
    8       4     u32 rows
    12      4     u32 cols
    16      4     u32 dim
    20      4     u32 patch_size
    24      4     u32 source height
    28      4     u32 source width
    32      ...   float32[rows*cols*dim], row-major patch grid

Masks are single-channel 8-bit PNGs: 0 background, 255 foreground.  Any
pixel value >= 128 reads back as foreground so antialiased edges from other
tools stay usable.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadMagicError,
    DimensionOverflowError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .grids import BinaryMask, FeatureGrid

MAGIC = b"MSFG"
VERSION = 1
_HEADER = struct.Struct("<4s7I")
_U32_MAX = 0xFFFFFFFF


def write_features(grid: FeatureGrid, path: str | Path) -> None:
    """Serialize ``grid`` to ``path`` in MSFG format (bit-exact round trip)."""
    src_h, src_w = grid.source_dims
    fields = (grid.rows, grid.cols, grid.dim, grid.patch_size, src_h, src_w)
    for value in fields:
        if not 0 <= value <= _U32_MAX:
            raise DimensionOverflowError(f"header field {value} does not fit in u32")
    header = _HEADER.pack(MAGIC, VERSION, *fields)
    payload = np.ascontiguousarray(grid.data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_features(path: str | Path) -> FeatureGrid:
    """Load an MSFG file written by :func:`write_features` (or any conforming tool)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(
            f"{path}: file is {len(raw)} bytes, header alone needs {_HEADER.size}"
        )
    magic, version, rows, cols, dim, patch_size, src_h, src_w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, reader supports {VERSION}")
    count = rows * cols * dim
    expected = _HEADER.size + 4 * count
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"{path}: {len(raw)} bytes, header promises {expected} "
            f"({rows}x{cols}x{dim} float32)"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=count).copy()
    return FeatureGrid(rows, cols, dim, data, patch_size, (src_h, src_w))


def write_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask as a single-channel PNG, 0 = background, 255 = foreground."""
    img = Image.fromarray(np.where(mask.data, 255, 0).astype(np.uint8), mode="L")
    img.save(path, format="PNG")


def read_mask(path: str | Path) -> BinaryMask:
    """Read a PNG mask; pixels >= 128 count as foreground."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return BinaryMask(arr >= 128)
