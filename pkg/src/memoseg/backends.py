"""Segmenter and feature-extractor backends behind one small interface.

Two implementations ship:

  * MockBackend — analytic, model-free, fully deterministic.  Features are
    per-patch color statistics; segmentation is seeded region growing at
    three color tolerances.  Exists so every pipeline stage is testable
    (and hand-checkable) without any neural network.
  * BridgeBackend — a client that drives an external model-runner process
    over line-delimited JSON on its stdio, exchanging tensors and masks as
    files.  This is how the real extractor and promptable segmenter plug in.

Both return the same types, so the pipeline never knows which it is using.
"""

from __future__ import annotations

import json
import subprocess
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from queue import Empty, Queue
from typing import Protocol

import numpy as np
from PIL import Image
from scipy import ndimage

from . import msfg
from .errors import BackendError, EmptyInputError, NoCandidatesError, PromptError
from .grids import DEFAULT_PATCH_SIZE, BinaryMask, FeatureGrid, l2_normalize_grid
from .prompts import PromptSet


@dataclass(frozen=True)
class ScoredMask:
    mask: BinaryMask
    score: float


class Backend(Protocol):
    def extract_features(self, image_path: str | Path) -> FeatureGrid: ...

    def segment(self, image_path: str | Path, prompts: PromptSet) -> list[ScoredMask]: ...

    def close(self) -> None: ...


def select_best(candidates: list[ScoredMask]) -> BinaryMask:
    """Highest-scoring candidate mask.

    Ties go to the smaller foreground area, then to the earlier candidate —
    when the segmenter cannot decide, prefer the conservative mask.
    """
    if not candidates:
        raise NoCandidatesError("segmenter returned no candidate masks")
    best = min(
        range(len(candidates)),
        key=lambda i: (-candidates[i].score, candidates[i].mask.fg_count, i),
    )
    return candidates[best].mask


def load_rgb(image_path: str | Path) -> np.ndarray:
    """Decode an image file to (H, W, 3) uint8."""
    with Image.open(image_path) as img:
        return np.asarray(img.convert("RGB"))


# ---------------------------------------------------------------------------
# mock backend


def _hue_bins(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hue bin index (8 bins of 45 degrees) per pixel, plus a chromatic flag.

    Achromatic pixels (max channel == min channel) have no hue and are
    excluded from the histogram via the flag.
    """
    v = rgb.astype(np.float64)
    mx = v.max(axis=-1)
    mn = v.min(axis=-1)
    delta = mx - mn
    chromatic = delta > 0
    safe = np.where(chromatic, delta, 1.0)
    r, g, b = v[..., 0], v[..., 1], v[..., 2]
    hue = np.where(
        mx == r,
        (g - b) / safe % 6.0,
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    bins = np.clip((hue * 60.0 / 45.0).astype(np.int64), 0, 7)
    return bins, chromatic


class MockBackend:
    """Deterministic stand-in for the neural extractor and segmenter.

    Features: per 16x16 patch, concat(mean RGB, RGB std, 8-bin hue
    histogram), all unit-normalized.  14 dimensions.

    Segmentation: region-growing from the FG prompt over pixels within
    color distance t of the seed pixel, for three tolerances, scored by
        (1 - violations / max(1, n_bg)) * (1 - |area - median area| / image area)
    where violations counts BG prompts falling inside the candidate.
    """

    FEATURE_DIM = 14
    GROW_TOLERANCES = (25.0, 55.0, 95.0)

    def __init__(self, patch_size: int = DEFAULT_PATCH_SIZE):
        self.patch_size = patch_size

    def extract_features(self, image_path: str | Path) -> FeatureGrid:
        rgb = load_rgb(image_path)
        h, w = rgb.shape[:2]
        ps = self.patch_size
        rows, cols = h // ps, w // ps
        if rows < 1 or cols < 1:
            raise EmptyInputError(f"image {h}x{w} smaller than one {ps}x{ps} patch")

        # trailing pixels beyond the last full patch are ignored
        v = rgb[: rows * ps, : cols * ps].astype(np.float64)
        blocks = v.reshape(rows, ps, cols, ps, 3)
        mean = blocks.mean(axis=(1, 3)) / 255.0
        std = blocks.std(axis=(1, 3)) / 255.0

        bins, chromatic = _hue_bins(rgb[: rows * ps, : cols * ps])
        patch_idx = (np.arange(rows * ps)[:, None] // ps) * cols + (
            np.arange(cols * ps)[None, :] // ps
        )
        flat = (patch_idx * 8 + bins)[chromatic]
        hist = np.bincount(flat, minlength=rows * cols * 8).reshape(rows * cols, 8)
        hist = hist / float(ps * ps)

        data = np.concatenate(
            [mean.reshape(rows * cols, 3), std.reshape(rows * cols, 3), hist], axis=1
        ).astype(np.float32)
        grid = FeatureGrid(rows, cols, self.FEATURE_DIM, data, ps, (h, w))
        return l2_normalize_grid(grid)

    def segment(self, image_path: str | Path, prompts: PromptSet) -> list[ScoredMask]:
        rgb = load_rgb(image_path).astype(np.float64)
        h, w = rgb.shape[:2]
        fg = [p for p in prompts.points if p.label == 1]
        bg = [p for p in prompts.points if p.label == 0]
        if len(fg) != 1:
            raise PromptError(f"expected exactly one foreground prompt, got {len(fg)}")
        seed = fg[0]
        if not (0 <= seed.x < w and 0 <= seed.y < h):
            raise PromptError(f"foreground point ({seed.x}, {seed.y}) outside {w}x{h} image")

        seed_color = rgb[seed.y, seed.x]
        dist = np.sqrt(((rgb - seed_color) ** 2).sum(axis=-1))
        regions = []
        for tol in self.GROW_TOLERANCES:
            reachable = dist <= tol
            labeled, _ = ndimage.label(reachable)  # 4-connectivity
            regions.append(labeled == labeled[seed.y, seed.x])

        areas = [int(r.sum()) for r in regions]
        median_area = float(np.median(areas))
        out = []
        for region, area in zip(regions, areas):
            violations = sum(1 for p in bg if 0 <= p.x < w and 0 <= p.y < h and region[p.y, p.x])
            penalty = 1.0 - violations / max(1, len(bg))
            bonus = 1.0 - abs(area - median_area) / float(h * w)
            out.append(ScoredMask(BinaryMask(region), penalty * bonus))
        return out

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# bridge backend

BRIDGE_TIMEOUT = 120.0
_STDERR_KEEP = 64
_EOF = object()


class BridgeBackend:
    """Client for an external model-runner speaking the stdio bridge protocol.

    One request in flight at a time; responses pair with requests by strict
    alternation.  Tensors and masks travel as file paths, never inline.
    """

    def __init__(self, command: list[str], timeout: float = BRIDGE_TIMEOUT):
        self.command = list(command)
        self.timeout = timeout
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: Queue = Queue()
        self._stderr: deque[str] = deque(maxlen=_STDERR_KEEP)
        self._lock = threading.Lock()
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()

    def _pump_stdout(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _pump_stderr(self) -> None:
        assert self._proc.stderr is not None
        for line in self._proc.stderr:
            self._stderr.append(line.rstrip("\n"))

    def _fail(self, message: str) -> BackendError:
        return BackendError(message, transcript=list(self._stderr))

    def _request(self, payload: dict) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise self._fail(f"runner exited with code {self._proc.returncode}")
            assert self._proc.stdin is not None
            try:
                self._proc.stdin.write(json.dumps(payload) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise self._fail(f"cannot write to runner: {exc}") from exc
            try:
                line = self._lines.get(timeout=self.timeout)
            except Empty:
                raise self._fail(f"no response within {self.timeout:.0f}s") from None
        if line is _EOF:
            raise self._fail("runner closed its stdout mid-conversation")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            raise self._fail(f"response is not valid JSON: {line!r}") from exc
        if not isinstance(resp, dict):
            raise self._fail(f"response is not an object: {resp!r}")
        if resp.get("ok") is not True:
            raise self._fail(f"runner error: {resp.get('error', 'unspecified')}")
        return resp

    def extract_features(self, image_path: str | Path) -> FeatureGrid:
        resp = self._request({"op": "extract", "image": str(image_path)})
        if "features" not in resp:
            raise self._fail("extract response lacks 'features' path")
        grid = msfg.read_features(resp["features"])
        if not grid.is_normalized():
            raise self._fail("runner produced non-unit patch vectors")
        return grid

    def segment(self, image_path: str | Path, prompts: PromptSet) -> list[ScoredMask]:
        fg = [p for p in prompts.points if p.label == 1]
        if len(fg) != 1:
            raise PromptError(f"expected exactly one foreground prompt, got {len(fg)}")
        resp = self._request(
            {
                "op": "segment",
                "image": str(image_path),
                "points": prompts.to_json_obj()["points"],
            }
        )
        records = resp.get("masks")
        if not records:
            raise self._fail("runner returned zero candidate masks")
        out = []
        for rec in records:
            out.append(ScoredMask(msfg.read_mask(rec["png"]), float(rec["score"])))
        return out

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "BridgeBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def make_backend(spec: str, timeout: float = BRIDGE_TIMEOUT) -> Backend:
    """Build a backend from its CLI descriptor: "mock" or "bridge:CMD ...".

    The bridge command is split on whitespace; quote-free paths only.
    """
    if spec == "mock":
        return MockBackend()
    if spec.startswith("bridge:"):
        command = spec[len("bridge:") :].split()
        if not command:
            raise ValueError("bridge backend needs a command, e.g. bridge:segrunner")
        return BridgeBackend(command, timeout=timeout)
    raise ValueError(f"unknown backend {spec!r}; expected 'mock' or 'bridge:CMD'")
