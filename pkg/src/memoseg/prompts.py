"""Turn match candidates into point prompts: one positive anchor plus
background negatives.

The output contract is rigid — exactly one label-1 point, first in the set —
because downstream segmenters treat the first positive as the object seed.
Background points are where leakage control comes from: each one vetoes a
region the segmenter might otherwise absorb into the object.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum

from .errors import NoForegroundError
from .matching import MatchCandidate

logger = logging.getLogger(__name__)


class FgStrategy(Enum):
    """How the single positive anchor is picked from the FG candidates."""

    MOST_CONFIDENT = "confident"
    KMEANS_REPRESENTATIVE = "kmeans"


@dataclass(frozen=True)
class PromptPolicy:
    """fg_strategy picks the anchor; bg_top_n=None keeps every accepted BG
    candidate, an integer keeps only the top-n by similarity.  bg_top_n=0 is
    the foreground-only mode used by the safety experiments."""

    fg_strategy: FgStrategy = FgStrategy.MOST_CONFIDENT
    bg_top_n: int | None = None

    def __post_init__(self):
        if self.bg_top_n is not None and self.bg_top_n < 0:
            raise ValueError(f"bg_top_n must be >= 0 or None, got {self.bg_top_n}")


@dataclass(frozen=True)
class PointPrompt:
    x: int
    y: int
    label: int  # 1 = foreground, 0 = background

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    @property
    def point(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass(frozen=True)
class PromptSet:
    """Ordered prompts: the FG anchor first, then BG points."""

    points: tuple[PointPrompt, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def __len__(self) -> int:
        return len(self.points)

    def to_json_obj(self) -> dict:
        return {"points": [{"x": p.x, "y": p.y, "label": p.label} for p in self.points]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PromptSet":
        pts = tuple(PointPrompt(int(p["x"]), int(p["y"]), int(p["label"])) for p in obj["points"])
        return cls(pts)

    @classmethod
    def from_json(cls, text: str) -> "PromptSet":
        return cls.from_json_obj(json.loads(text))


def select_fg(candidates: list[MatchCandidate], strategy: FgStrategy) -> PointPrompt:
    """Pick the single positive anchor.

    MOST_CONFIDENT takes the highest-similarity candidate (ties: lowest query
    patch index).  KMEANS_REPRESENTATIVE runs k-means with k=1 over the
    candidate pixel coordinates — that is, takes their centroid — and picks
    the candidate closest to it (ties: higher similarity, then lowest index).
    """
    if not candidates:
        raise NoForegroundError("no foreground candidates cleared the threshold")
    if strategy is FgStrategy.MOST_CONFIDENT:
        best = max(candidates, key=lambda c: (c.similarity, -c.query_patch))
    else:
        cx = sum(c.point[0] for c in candidates) / len(candidates)
        cy = sum(c.point[1] for c in candidates) / len(candidates)
        best = min(
            candidates,
            key=lambda c: (
                (c.point[0] - cx) ** 2 + (c.point[1] - cy) ** 2,
                -c.similarity,
                c.query_patch,
            ),
        )
    return PointPrompt(best.point[0], best.point[1], 1)


def select_bg(
    candidates: list[MatchCandidate],
    top_n: int | None = None,
    fg_point: tuple[int, int] | None = None,
) -> list[PointPrompt]:
    """Pick background points, in query-patch order.

    Candidates colliding with the FG anchor are dropped before any counting,
    so a top-n selection still yields n points when enough remain.  An empty
    result is legal but logged: with no negatives the segmenter has nothing
    holding it back from swallowing look-alike regions.
    """
    pool = [c for c in candidates if fg_point is None or c.point != tuple(fg_point)]
    if top_n is not None and len(pool) > top_n:
        ranked = sorted(pool, key=lambda c: (-c.similarity, c.query_patch))[:top_n]
        pool = sorted(ranked, key=lambda c: c.query_patch)
    else:
        pool = sorted(pool, key=lambda c: c.query_patch)
    if not pool:
        logger.warning("no background prompts selected; segmentation will run unconstrained")
    return [PointPrompt(c.point[0], c.point[1], 0) for c in pool]


def build_prompt_set(fg: PointPrompt, bg: list[PointPrompt]) -> PromptSet:
    """Assemble the final set: FG anchor first, then BG points in their
    selection order, with exact duplicates and FG-colliding BG points dropped."""
    if fg.label != 1:
        raise ValueError("anchor prompt must carry label 1")
    points: list[PointPrompt] = [fg]
    seen = {(fg.x, fg.y, fg.label)}
    for p in bg:
        if p.label != 0:
            raise ValueError("background prompts must carry label 0")
        if p.point == fg.point:
            continue
        key = (p.x, p.y, p.label)
        if key in seen:
            continue
        seen.add(key)
        points.append(p)
    return PromptSet(tuple(points))


def make_prompts(
    fg_candidates: list[MatchCandidate],
    bg_candidates: list[MatchCandidate],
    policy: PromptPolicy = PromptPolicy(),
) -> PromptSet:
    """End-to-end selection: anchor, negatives, assembly."""
    fg = select_fg(fg_candidates, policy.fg_strategy)
    bg = select_bg(bg_candidates, policy.bg_top_n, fg.point)
    return build_prompt_set(fg, bg)
