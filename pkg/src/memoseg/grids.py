"""Feature grids, binary masks, patch-label grids, and the coordinate bookkeeping
shared by every stage of the pipeline.

Conventions used throughout:
  * patch index i is row-major over an (rows x cols) grid: i = row * cols + col
  * pixel coordinates are (x, y) with x = column, y = row
  * source_dims is (height, width) of the image the features were extracted from
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimMismatchError, EmptyInputError, ZeroVectorError

DEFAULT_PATCH_SIZE = 16
NORM_TOLERANCE = 1e-5
ZERO_NORM_FLOOR = 1e-12


class Side(str, Enum):
    """Which region of the exemplar a patch (or match) belongs to."""

    FG = "fg"
    BG = "bg"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureGrid:
    """Dense patch embeddings for one image.

    ``data`` is (rows*cols, dim) float32, row-major over the patch grid;
    vectors are expected to be unit-norm after :func:`l2_normalize_grid`.
    """

    rows: int
    cols: int
    dim: int
    data: np.ndarray
    patch_size: int = DEFAULT_PATCH_SIZE
    source_dims: tuple[int, int] = (0, 0)  # (height, width) in pixels

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.dim < 1:
            raise ValueError(f"grid dims must be >= 1, got {self.rows}x{self.cols}x{self.dim}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.size != self.rows * self.cols * self.dim:
            raise ValueError(
                f"data has {data.size} values, expected {self.rows}x{self.cols}x{self.dim}"
            )
        data = data.reshape(self.rows * self.cols, self.dim)
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "source_dims", tuple(int(v) for v in self.source_dims))

    @property
    def patch_count(self) -> int:
        return self.rows * self.cols

    def vector(self, index: int) -> np.ndarray:
        return self.data[index]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.data.astype(np.float64), axis=1)

    def is_normalized(self, tol: float = NORM_TOLERANCE) -> bool:
        return bool(np.all(np.abs(self.norms() - 1.0) <= tol))


@dataclass(frozen=True)
class BinaryMask:
    """Bit-per-pixel foreground mask; ``data`` is a read-only (H, W) bool array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", _freeze(np.ascontiguousarray(data, dtype=bool)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def fg_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True)
class PatchLabelGrid:
    """Per-patch FG/BG labels aligned with a FeatureGrid; ``labels`` is (rows, cols) bool,
    True = FG."""

    rows: int
    cols: int
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=bool)
        if labels.shape != (self.rows, self.cols):
            raise ValueError(f"labels shape {labels.shape} != ({self.rows}, {self.cols})")
        object.__setattr__(self, "labels", _freeze(np.ascontiguousarray(labels)))

    def fg_indices(self) -> np.ndarray:
        """Flat patch indices labeled FG, ascending."""
        return np.flatnonzero(self.labels.ravel())

    def bg_indices(self) -> np.ndarray:
        """Flat patch indices labeled BG, ascending."""
        return np.flatnonzero(~self.labels.ravel())


def l2_normalize_grid(grid: FeatureGrid) -> FeatureGrid:
    """Return a copy of ``grid`` with every patch vector scaled to unit norm.

    Raises ZeroVectorError (naming the offending patch) if any vector's norm
    falls below 1e-12; direction is preserved for all others.
    """
    data = grid.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=1)
    bad = np.flatnonzero(norms < ZERO_NORM_FLOOR)
    if bad.size:
        idx = int(bad[0])
        raise ZeroVectorError(idx, float(norms[idx]))
    out = (data / norms[:, None]).astype(np.float32)
    return FeatureGrid(grid.rows, grid.cols, grid.dim, out, grid.patch_size, grid.source_dims)


def downsample_mask(mask: BinaryMask, rows: int, cols: int) -> PatchLabelGrid:
    """Resize a pixel mask onto a patch grid by per-patch majority vote.

    A patch is FG iff strictly more than half of its covered pixels are FG;
    exact ties label BG.  Pixels are partitioned into contiguous blocks with
    boundaries floor(k*H/rows), floor(k*W/cols).
    """
    h, w = mask.height, mask.width
    if h == 0 or w == 0:
        raise EmptyInputError("cannot downsample a zero-size mask")
    if rows < 1 or cols < 1:
        raise ValueError(f"target grid must be >= 1x1, got {rows}x{cols}")
    if h < rows or w < cols:
        raise ValueError(f"mask {h}x{w} smaller than target grid {rows}x{cols}")

    # integral image for exact block counts
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask.data, axis=0), axis=1, out=integral[1:, 1:])
    ys = (np.arange(rows + 1, dtype=np.int64) * h) // rows
    xs = (np.arange(cols + 1, dtype=np.int64) * w) // cols

    corners = integral[np.ix_(ys, xs)]
    fg = corners[1:, 1:] - corners[:-1, 1:] - corners[1:, :-1] + corners[:-1, :-1]
    total = (ys[1:] - ys[:-1])[:, None] * (xs[1:] - xs[:-1])[None, :]
    return PatchLabelGrid(rows, cols, 2 * fg > total)


def patch_center(index: int, grid: FeatureGrid) -> tuple[int, int]:
    """Center pixel (x, y) of patch ``index`` in the grid's source image space.

    Centers are (col*ps + ps/2, row*ps + ps/2) in the extractor's input space
    (rows*ps by cols*ps), scaled to source_dims when the image was resized for
    extraction, truncated to integers, and clamped into image bounds.
    """
    n = grid.patch_count
    if not 0 <= index < n:
        raise IndexError(f"patch index {index} out of range [0, {n})")
    src_h, src_w = grid.source_dims
    if src_h < 1 or src_w < 1:
        raise ValueError(f"grid has no usable source_dims: {grid.source_dims}")
    ps = grid.patch_size
    row, col = divmod(index, grid.cols)
    x = (col * ps + ps / 2.0) * (src_w / (grid.cols * ps))
    y = (row * ps + ps / 2.0) * (src_h / (grid.rows * ps))
    xi = min(max(int(math.floor(x)), 0), src_w - 1)
    yi = min(max(int(math.floor(y)), 0), src_h - 1)
    return (xi, yi)


def check_same_dims(a: FeatureGrid, b: FeatureGrid) -> None:
    if a.dim != b.dim:
        raise DimMismatchError(f"embedding dims differ: {a.dim} vs {b.dim}")
