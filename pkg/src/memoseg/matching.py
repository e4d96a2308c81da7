"""Mask-constrained dense matching between a query grid and one exemplar.

Every query patch is matched twice against the exemplar: once restricted to
the exemplar's FG-labeled patches and once to its BG-labeled patches.  A
match is kept as a candidate only if its cosine similarity clears the
threshold for that side.  Constraining the argmax to each region separately
is what keeps a query patch from being "explained" by the wrong semantic
region of the exemplar.

Similarities are plain dot products (inputs are unit vectors), accumulated
in float64.  Values may exceed 1 in magnitude by a few ulps; they are not
clamped, since clamping would erase genuine orderings near 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateExemplarError, EmptySubsetError
from .grids import FeatureGrid, PatchLabelGrid, Side, check_same_dims, patch_center


@dataclass(frozen=True)
class MatchCandidate:
    """One accepted query-to-exemplar correspondence.

    ``point`` is the query patch's center pixel (x, y) in the query image,
    ready to be used as a prompt coordinate.
    """

    query_patch: int
    ref_patch: int
    similarity: float
    point: tuple[int, int]
    side: Side


@dataclass(frozen=True)
class MatchConfig:
    """Acceptance thresholds per side.  0.0 is legal and keeps every match
    whose best similarity is nonnegative (anti-correlated patches still drop)."""

    tau_fg: float = 0.9
    tau_bg: float = 0.9

    def __post_init__(self):
        for name, tau in (("tau_fg", self.tau_fg), ("tau_bg", self.tau_bg)):
            if not 0.0 <= tau <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {tau}")


def similarity_row(
    query_grid: FeatureGrid, i: int, ref_grid: FeatureGrid, subset: np.ndarray
) -> tuple[int, float]:
    """Best match for query patch ``i`` among the given exemplar patch indices.

    Returns (ref patch index, similarity); exact argmax with ties going to
    the lowest index.
    """
    check_same_dims(query_grid, ref_grid)
    subset = np.asarray(subset, dtype=np.int64)
    if subset.size == 0:
        raise EmptySubsetError("similarity_row over an empty patch subset")
    sims = ref_grid.data[subset].astype(np.float64) @ query_grid.vector(i).astype(np.float64)
    best = int(np.argmax(sims))  # first occurrence = lowest index (subset is ascending)
    return int(subset[best]), float(sims[best])


def match_constrained(
    query_grid: FeatureGrid,
    ref_grid: FeatureGrid,
    ref_labels: PatchLabelGrid,
    config: MatchConfig = MatchConfig(),
) -> tuple[list[MatchCandidate], list[MatchCandidate]]:
    """Match every query patch against the exemplar's FG and BG regions.

    Returns (fg_candidates, bg_candidates), each ordered by query patch
    index.  A query patch can appear on both sides; conflicts are left to
    prompt selection.  Raises DegenerateExemplarError naming the empty side
    when the exemplar mask covers everything or nothing.
    """
    check_same_dims(query_grid, ref_grid)
    if (ref_labels.rows, ref_labels.cols) != (ref_grid.rows, ref_grid.cols):
        raise ValueError(
            f"label grid {ref_labels.rows}x{ref_labels.cols} does not match "
            f"feature grid {ref_grid.rows}x{ref_grid.cols}"
        )
    fg_idx = ref_labels.fg_indices()
    bg_idx = ref_labels.bg_indices()
    if fg_idx.size == 0:
        raise DegenerateExemplarError("fg")
    if bg_idx.size == 0:
        raise DegenerateExemplarError("bg")

    # one dense similarity matrix, then per-side argmax over column subsets
    sims = query_grid.data.astype(np.float64) @ ref_grid.data.astype(np.float64).T

    def side_candidates(indices: np.ndarray, tau: float, side: Side) -> list[MatchCandidate]:
        block = sims[:, indices]
        best = np.argmax(block, axis=1)  # first max = lowest ref index
        best_sims = block[np.arange(block.shape[0]), best]
        out = []
        for i in np.flatnonzero(best_sims >= tau):
            out.append(
                MatchCandidate(
                    query_patch=int(i),
                    ref_patch=int(indices[best[i]]),
                    similarity=float(best_sims[i]),
                    point=patch_center(int(i), query_grid),
                    side=side,
                )
            )
        return out

    return (
        side_candidates(fg_idx, config.tau_fg, Side.FG),
        side_candidates(bg_idx, config.tau_bg, Side.BG),
    )
