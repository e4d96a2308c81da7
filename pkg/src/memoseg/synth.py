"""Synthetic scene generator for exercising the pipeline without real data.

Two families, both 128x128 RGB over a noisy blue background:

  * simple — one solid orange blob (ellipse or five-pointed star), mask =
    the blob.  Blob colors and minimum sizes are chosen so that every blob
    contains at least one full 16x16 patch of pure blob color; that patch
    is what retrieval and matching lock onto.
  * adversarial — a grid-aligned orange square sitting flush against a
    full-height distractor band in a near-identical color.  The band is
    always larger than the target and close enough in color that a greedy
    region grower will absorb it unless background points vote it down.
    This is the leakage stress test.

Everything is driven by one seeded generator; a given (count, seed, family)
triple reproduces bit-identical pixels on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .grids import BinaryMask
from .msfg import write_mask

CANVAS = 128
BG_BASE = (40, 60, 160)
BG_NOISE = 20
BLOB_COLOR = (200, 140, 30)
# distractor = blob shifted in green only: RGB distance exactly 50, so the
# mid/high grow tolerances cross over but the low one never does
DISTRACTOR_COLOR = (200, 190, 30)

FAMILIES = ("simple", "adversarial")


@dataclass(frozen=True)
class SynthSample:
    id: str
    image: np.ndarray  # (H, W, 3) uint8
    mask: BinaryMask

    def __post_init__(self):
        img = np.ascontiguousarray(self.image, dtype=np.uint8)
        img.setflags(write=False)
        object.__setattr__(self, "image", img)


def _noise_background(rng: np.random.Generator) -> np.ndarray:
    base = np.array(BG_BASE, dtype=np.int64)
    noise = rng.integers(-BG_NOISE, BG_NOISE + 1, size=(CANVAS, CANVAS, 3))
    return np.clip(base + noise, 0, 255).astype(np.uint8)


def _star_points(cx: float, cy: float, outer: float, rot: float) -> list[tuple[float, float]]:
    # inner/outer ratio 0.62 keeps the inscribed disk above ~0.59 * outer,
    # large enough to contain a full grid-aligned patch at outer >= 40
    pts = []
    for k in range(10):
        radius = outer if k % 2 == 0 else 0.62 * outer
        angle = rot + k * math.pi / 5.0
        pts.append((cx + radius * math.cos(angle), cy + radius * math.sin(angle)))
    return pts


def _simple_scene(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    img = Image.fromarray(_noise_background(rng))
    mask = Image.new("1", (CANVAS, CANVAS), 0)
    idraw = ImageDraw.Draw(img)
    mdraw = ImageDraw.Draw(mask)

    if rng.integers(0, 2) == 0:
        a = int(rng.integers(24, 35))
        b = int(rng.integers(24, 35))
        cx = int(rng.integers(a + 2, CANVAS - a - 2))
        cy = int(rng.integers(b + 2, CANVAS - b - 2))
        box = [cx - a, cy - b, cx + a, cy + b]
        idraw.ellipse(box, fill=BLOB_COLOR)
        mdraw.ellipse(box, fill=1)
    else:
        outer = int(rng.integers(40, 47))
        cx = int(rng.integers(outer + 2, CANVAS - outer - 2))
        cy = int(rng.integers(outer + 2, CANVAS - outer - 2))
        rot = float(rng.uniform(0.0, 2.0 * math.pi))
        pts = _star_points(cx, cy, outer, rot)
        idraw.polygon(pts, fill=BLOB_COLOR)
        mdraw.polygon(pts, fill=1)

    return np.asarray(img), np.asarray(mask, dtype=bool)


def _adversarial_scene(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    img = Image.fromarray(_noise_background(rng))
    mask = Image.new("1", (CANVAS, CANVAS), 0)
    idraw = ImageDraw.Draw(img)
    mdraw = ImageDraw.Draw(mask)

    band_w = int(rng.choice([48, 64]))
    side = int(rng.choice([32, 48]))
    # target square flush against the band's left edge, grid-aligned so no
    # patch mixes target and background colors
    x0 = CANVAS - band_w - side
    y0 = 16 * int(rng.integers(0, (CANVAS - side) // 16 + 1))

    idraw.rectangle([CANVAS - band_w, 0, CANVAS - 1, CANVAS - 1], fill=DISTRACTOR_COLOR)
    idraw.rectangle([x0, y0, x0 + side - 1, y0 + side - 1], fill=BLOB_COLOR)
    mdraw.rectangle([x0, y0, x0 + side - 1, y0 + side - 1], fill=1)

    return np.asarray(img), np.asarray(mask, dtype=bool)


def synth_dataset(count: int, seed: int, family: str) -> list[SynthSample]:
    """Generate ``count`` image/mask pairs; deterministic per (count, seed, family)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    rng = np.random.default_rng([seed, FAMILIES.index(family)])
    scene = _simple_scene if family == "simple" else _adversarial_scene
    out = []
    for k in range(count):
        image, mask = scene(rng)
        out.append(SynthSample(f"{family}-{seed}-{k:03d}", image, BinaryMask(mask)))
    return out


def write_dataset(
    samples: list[SynthSample], images_dir: str | Path, masks_dir: str | Path
) -> None:
    """Write each sample as images_dir/<id>.png + masks_dir/<id>.png."""
    images_dir = Path(images_dir)
    masks_dir = Path(masks_dir)
    images_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(s.image).save(images_dir / f"{s.id}.png", format="PNG")
        write_mask(s.mask, masks_dir / f"{s.id}.png")
