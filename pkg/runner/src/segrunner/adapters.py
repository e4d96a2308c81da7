"""Feature extractors and promptable segmenters the server can mount.

Stubs are pure numpy/scipy, deterministic, and fast enough for protocol
tests; the real adapters wrap DINOv3 (dense features) and SAM2 (promptable
masks) and import their frameworks only inside load(), so a machine without
torch can still run the stub configuration.

Every adapter exposes load() (may be expensive, may fail), describe() (a
JSON-able account of exactly what it does to pixels, echoed into the
run configuration so results are attributable), and its one operation.
"""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

import numpy as np
from PIL import Image
from scipy import ndimage

INPUT_SIDE = 512
PATCH_SIZE = 16
GRID_SIDE = INPUT_SIDE // PATCH_SIZE
STUB_FEATURE_DIM = 1024

# standard ImageNet statistics; shared by the stub and the real extractor
NORMALIZE_MEAN = (0.485, 0.456, 0.406)
NORMALIZE_STD = (0.229, 0.224, 0.225)

# changing this seed changes every stub feature ever emitted
_PROJECTION_SEED = 61873

_PREPROCESS_DOC = {
    "color_space": "RGB",
    "resize": [INPUT_SIDE, INPUT_SIDE],
    "resample": "bilinear",
    "scale": "pixel / 255",
    "normalize_mean": list(NORMALIZE_MEAN),
    "normalize_std": list(NORMALIZE_STD),
}


class AdapterError(RuntimeError):
    """An adapter cannot load or cannot serve a request."""


class Extractor(Protocol):
    def load(self) -> None: ...

    def describe(self) -> dict: ...

    def extract(self, image_path: str) -> tuple[np.ndarray, int, tuple[int, int]]: ...


class Segmenter(Protocol):
    def load(self) -> None: ...

    def describe(self) -> dict: ...

    def segment(self, image_path: str, points: list[dict]) -> list[tuple[np.ndarray, float]]: ...


def load_rgb(image_path: str | Path) -> np.ndarray:
    """Decode an image to (H, W, 3) uint8; AdapterError on unreadable files."""
    try:
        with Image.open(image_path) as img:
            return np.asarray(img.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise AdapterError(f"cannot read image {image_path}: {exc}") from exc


def preprocess(rgb: np.ndarray) -> np.ndarray:
    """The documented input transform: resize, scale, channel-normalize.

    Returns (INPUT_SIDE, INPUT_SIDE, 3) float64.
    """
    img = Image.fromarray(rgb).resize((INPUT_SIDE, INPUT_SIDE), Image.BILINEAR)
    x = np.asarray(img, dtype=np.float64) / 255.0
    return (x - np.asarray(NORMALIZE_MEAN)) / np.asarray(NORMALIZE_STD)


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    """L2-normalize each row; rows with no direction become the first basis vector."""
    rows = rows.astype(np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    degenerate = norms[:, 0] < 1e-12
    out = rows / np.where(degenerate[:, None], 1.0, norms)
    if degenerate.any():
        out[degenerate] = 0.0
        out[degenerate, 0] = 1.0
    return out


# ---------------------------------------------------------------------------
# stubs


class StubExtractor:
    """Random-projection patch features: cheap, content-sensitive, deterministic.

    Each 16x16 patch of the preprocessed image is flattened (768 values) and
    pushed through one fixed gaussian matrix into STUB_FEATURE_DIM
    dimensions, then l2-normalized.  Identical patches map to identical unit
    vectors and the projection roughly preserves cosine geometry, which is
    all the client's matching stage needs.
    """

    def __init__(self) -> None:
        self._projection: np.ndarray | None = None

    def load(self) -> None:
        rng = np.random.default_rng(_PROJECTION_SEED)
        self._projection = rng.standard_normal((PATCH_SIZE * PATCH_SIZE * 3, STUB_FEATURE_DIM))

    def describe(self) -> dict:
        return {
            "name": "stub-projection",
            "preprocessing": dict(_PREPROCESS_DOC),
            "patch_size": PATCH_SIZE,
            "grid": [GRID_SIDE, GRID_SIDE],
            "feature_dim": STUB_FEATURE_DIM,
            "features": (
                "flattened patch pixels through a fixed gaussian projection "
                f"(seed {_PROJECTION_SEED}), l2-normalized"
            ),
        }

    def extract(self, image_path: str) -> tuple[np.ndarray, int, tuple[int, int]]:
        assert self._projection is not None, "load() first"
        rgb = load_rgb(image_path)
        src_h, src_w = rgb.shape[:2]
        x = preprocess(rgb)
        patches = (
            x.reshape(GRID_SIDE, PATCH_SIZE, GRID_SIDE, PATCH_SIZE, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(GRID_SIDE * GRID_SIDE, -1)
        )
        feats = normalize_rows(patches @ self._projection)
        grid = feats.reshape(GRID_SIDE, GRID_SIDE, STUB_FEATURE_DIM).astype(np.float32)
        return grid, PATCH_SIZE, (src_h, src_w)


class StubSegmenter:
    """Color flood fill from the positive points, one candidate per tolerance.

    A candidate keeps the connected components (within euclidean RGB
    distance of the mean seed color) that contain a positive point; the
    positive pixels themselves are always included so no candidate is empty.
    Score is the fraction of negative points the mask excludes, mimicking a
    confidence that honest segmenters assign to prompt-consistent masks.
    Works on the image at native resolution.
    """

    TOLERANCES = (20.0, 45.0, 80.0)

    def load(self) -> None:
        pass

    def describe(self) -> dict:
        return {
            "name": "stub-flood",
            "resolution": "native (no resize)",
            "tolerances": list(self.TOLERANCES),
            "metric": "euclidean RGB distance to the mean positive-point color",
            "scoring": "fraction of negative points excluded",
        }

    def segment(self, image_path: str, points: list[dict]) -> list[tuple[np.ndarray, float]]:
        rgb = load_rgb(image_path).astype(np.float64)
        h, w = rgb.shape[:2]
        fg = [(p["x"], p["y"]) for p in points if p["label"] == 1]
        bg = [(p["x"], p["y"]) for p in points if p["label"] == 0]
        if not fg:
            raise AdapterError("segment needs at least one positive point")
        for x, y in fg:
            if not (0 <= x < w and 0 <= y < h):
                raise AdapterError(f"positive point ({x}, {y}) outside {w}x{h} image")

        seed_color = np.mean([rgb[y, x] for x, y in fg], axis=0)
        dist = np.sqrt(((rgb - seed_color) ** 2).sum(axis=-1))
        out = []
        for tol in self.TOLERANCES:
            labeled, _ = ndimage.label(dist <= tol)
            seeds = {int(labeled[y, x]) for x, y in fg} - {0}
            mask = np.isin(labeled, sorted(seeds)) if seeds else np.zeros((h, w), dtype=bool)
            for x, y in fg:
                mask[y, x] = True
            # negatives outside the image cannot be violated, so they count as excluded
            violations = sum(1 for x, y in bg if 0 <= x < w and 0 <= y < h and mask[y, x])
            score = 1.0 - violations / max(1, len(bg))
            out.append((mask, score))
        return out


# ---------------------------------------------------------------------------
# real models


class DinoV3Extractor:
    """Dense patch embeddings from a DINOv3 ViT-L/16 checkpoint.

    The checkpoint reference is anything transformers.AutoModel accepts (a
    local directory or a hub id).  Preprocessing is done here, not by an
    image processor, so the transform in describe() is exactly what the
    model sees.  Patch tokens are the last GRID_SIDE**2 positions of the
    final hidden state; leading special tokens (CLS, registers) are dropped
    by position, which is robust to the register-token count.
    """

    def __init__(self, checkpoint: str, device: str = "cpu") -> None:
        if not checkpoint:
            raise AdapterError(
                "dinov3 extractor needs a checkpoint "
                "(--dinov3-checkpoint or SEGRUNNER_DINOV3_CHECKPOINT)"
            )
        self.checkpoint = checkpoint
        self.device = device
        self._model = None
        self._torch = None

    def load(self) -> None:
        try:
            import torch
            from transformers import AutoModel
        except ImportError as exc:
            raise AdapterError(f"dinov3 extractor needs torch and transformers: {exc}") from exc
        self._torch = torch
        try:
            self._model = AutoModel.from_pretrained(self.checkpoint).to(self.device).eval()
        except Exception as exc:
            raise AdapterError(f"cannot load dinov3 checkpoint {self.checkpoint!r}: {exc}") from exc

    def describe(self) -> dict:
        return {
            "name": "dinov3",
            "checkpoint": self.checkpoint,
            "device": self.device,
            "preprocessing": dict(_PREPROCESS_DOC),
            "patch_size": PATCH_SIZE,
            "grid": [GRID_SIDE, GRID_SIDE],
            "features": "final-hidden-state patch tokens, special tokens dropped, l2-normalized",
        }

    def extract(self, image_path: str) -> tuple[np.ndarray, int, tuple[int, int]]:
        assert self._model is not None, "load() first"
        torch = self._torch
        rgb = load_rgb(image_path)
        src_h, src_w = rgb.shape[:2]
        x = preprocess(rgb).transpose(2, 0, 1)[None]
        with torch.inference_mode():
            out = self._model(pixel_values=torch.from_numpy(x).float().to(self.device))
        tokens = out.last_hidden_state[0].double().cpu().numpy()
        n_patches = GRID_SIDE * GRID_SIDE
        if tokens.shape[0] < n_patches:
            raise AdapterError(
                f"model returned {tokens.shape[0]} tokens, expected at least {n_patches}"
            )
        feats = normalize_rows(tokens[-n_patches:])
        grid = feats.reshape(GRID_SIDE, GRID_SIDE, -1).astype(np.float32)
        return grid, PATCH_SIZE, (src_h, src_w)


class Sam2Segmenter:
    """Point-prompted masks from a SAM2 checkpoint via SAM2ImagePredictor.

    Needs the sam2 package (shipped from its upstream repository), a
    checkpoint file, and the matching model config name.  Multimask output
    is on, so the client gets the predictor's full candidate set with its
    native quality scores.
    """

    def __init__(self, checkpoint: str, model_config: str, device: str = "cpu") -> None:
        if not checkpoint or not model_config:
            raise AdapterError(
                "sam2 segmenter needs a checkpoint and a model config "
                "(--sam2-checkpoint/--sam2-config or SEGRUNNER_SAM2_CHECKPOINT/SEGRUNNER_SAM2_CONFIG)"
            )
        self.checkpoint = checkpoint
        self.model_config = model_config
        self.device = device
        self._predictor = None

    def load(self) -> None:
        if not Path(self.checkpoint).is_file():
            raise AdapterError(f"sam2 checkpoint {self.checkpoint!r} is not a file")
        try:
            from sam2.build_sam import build_sam2
            from sam2.sam2_image_predictor import SAM2ImagePredictor
        except ImportError as exc:
            raise AdapterError(
                f"sam2 segmenter needs the sam2 package from its upstream repository: {exc}"
            ) from exc
        try:
            model = build_sam2(self.model_config, self.checkpoint, device=self.device)
        except Exception as exc:
            raise AdapterError(f"cannot load sam2 checkpoint {self.checkpoint!r}: {exc}") from exc
        self._predictor = SAM2ImagePredictor(model)

    def describe(self) -> dict:
        return {
            "name": "sam2",
            "checkpoint": self.checkpoint,
            "model_config": self.model_config,
            "device": self.device,
            "resolution": "predictor-native",
            "multimask_output": True,
            "scoring": "predictor quality scores",
        }

    def segment(self, image_path: str, points: list[dict]) -> list[tuple[np.ndarray, float]]:
        assert self._predictor is not None, "load() first"
        rgb = load_rgb(image_path)
        if not any(p["label"] == 1 for p in points):
            raise AdapterError("segment needs at least one positive point")
        coords = np.array([[p["x"], p["y"]] for p in points], dtype=np.float32)
        labels = np.array([p["label"] for p in points], dtype=np.int32)
        self._predictor.set_image(rgb)
        masks, scores, _ = self._predictor.predict(
            point_coords=coords, point_labels=labels, multimask_output=True
        )
        return [(np.asarray(m, dtype=bool), float(s)) for m, s in zip(masks, scores)]
