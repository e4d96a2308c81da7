"""The request loop: line-delimited JSON in, line-delimited JSON out.

Each request line gets exactly one response line, in order.  Anything wrong
with a single request (unparseable line, unknown op, missing file, adapter
failure) becomes {"ok": false, "error": ...} and the loop continues; only
startup problems (bad configuration, unloadable models, unwritable work
directory) terminate the process.  Blank lines are not requests and are
skipped without a response.

Tensors never travel inline: extract responses point at an MSFG file,
segment responses at mask PNGs, all inside the work directory.  On startup
the resolved configuration, including each adapter's exact pixel
preprocessing, is echoed to work_dir/runner-config.json so any result can
be traced back to what produced it.
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np
from PIL import Image

from . import msfg
from .adapters import (
    AdapterError,
    DinoV3Extractor,
    Extractor,
    Sam2Segmenter,
    Segmenter,
    StubExtractor,
    StubSegmenter,
)

CONFIG_ECHO_NAME = "runner-config.json"


class StartupError(RuntimeError):
    """The server cannot come up with this configuration."""


@dataclass(frozen=True)
class RunnerConfig:
    extractor: str = "stub"
    segmenter: str = "stub"
    device: str = "cpu"
    work_dir: str | None = None  # None: a fresh temp directory
    dinov3_checkpoint: str | None = None
    sam2_checkpoint: str | None = None
    sam2_config: str | None = None


def build_adapters(config: RunnerConfig) -> tuple[Extractor, Segmenter]:
    if config.extractor == "stub":
        extractor: Extractor = StubExtractor()
    elif config.extractor == "dinov3":
        extractor = DinoV3Extractor(config.dinov3_checkpoint or "", config.device)
    else:
        raise StartupError(f"unknown extractor {config.extractor!r}; expected 'stub' or 'dinov3'")

    if config.segmenter == "stub":
        segmenter: Segmenter = StubSegmenter()
    elif config.segmenter == "sam2":
        segmenter = Sam2Segmenter(
            config.sam2_checkpoint or "", config.sam2_config or "", config.device
        )
    else:
        raise StartupError(f"unknown segmenter {config.segmenter!r}; expected 'stub' or 'sam2'")
    return extractor, segmenter


def _error(message: str) -> dict:
    return {"ok": False, "error": message}


class Server:
    """One extractor, one segmenter, one request in flight."""

    def __init__(self, config: RunnerConfig):
        self.config = config
        self.extractor, self.segmenter = build_adapters(config)
        self.extractor.load()
        self.segmenter.load()

        self.work_dir = Path(
            config.work_dir if config.work_dir else tempfile.mkdtemp(prefix="segrunner-")
        )
        try:
            self.work_dir.mkdir(parents=True, exist_ok=True)
            self._write_config_echo()  # doubles as the writability probe
        except OSError as exc:
            raise StartupError(f"work dir {self.work_dir} is not writable: {exc}") from exc
        self._seq = 0

    def _write_config_echo(self) -> None:
        echo = {
            "device": self.config.device,
            "work_dir": str(self.work_dir),
            "protocol": {
                "framing": "line-delimited JSON on stdio, one response per request",
                "requests": ["extract", "segment"],
                "tensor_exchange": "file paths: MSFG feature grids, PNG masks",
            },
            "extractor": self.extractor.describe(),
            "segmenter": self.segmenter.describe(),
        }
        path = self.work_dir / CONFIG_ECHO_NAME
        path.write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")

    # ------------------------------------------------------------------
    # request handling

    def handle_line(self, line: str) -> dict | None:
        """One request line to one response object; None for blank lines."""
        if not line.strip():
            return None
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return _error(f"request is not valid JSON: {exc}")
        if not isinstance(request, dict):
            return _error(f"request must be a JSON object, got {type(request).__name__}")
        try:
            return self._dispatch(request)
        except AdapterError as exc:
            return _error(str(exc))
        except Exception as exc:  # a bad request must never kill the loop
            return _error(f"{type(exc).__name__}: {exc}")

    def _dispatch(self, request: dict) -> dict:
        op = request.get("op")
        if op == "extract":
            return self._extract(request)
        if op == "segment":
            return self._segment(request)
        if op is None:
            return _error("request lacks 'op'")
        return _error(f"unknown op {op!r}; expected 'extract' or 'segment'")

    def _image_path(self, request: dict) -> str:
        image = request.get("image")
        if not isinstance(image, str) or not image:
            raise AdapterError("request needs an 'image' path string")
        return image

    def _extract(self, request: dict) -> dict:
        image = self._image_path(request)
        features, patch_size, source_dims = self.extractor.extract(image)
        self._seq += 1
        path = self.work_dir / f"extract-{self._seq:06d}.msfg"
        msfg.write_grid(path, features, patch_size, source_dims)
        return {"ok": True, "features": str(path)}

    def _segment(self, request: dict) -> dict:
        image = self._image_path(request)
        points = request.get("points")
        if not isinstance(points, list) or not points:
            raise AdapterError("request needs a non-empty 'points' list")
        for i, point in enumerate(points):
            if not isinstance(point, dict):
                raise AdapterError(f"points[{i}] must be an object")
            for key in ("x", "y", "label"):
                value = point.get(key)
                if not isinstance(value, int) or isinstance(value, bool):
                    raise AdapterError(f"points[{i}].{key} must be an integer")
            if point["label"] not in (0, 1):
                raise AdapterError(f"points[{i}].label must be 0 or 1, got {point['label']}")

        candidates = self.segmenter.segment(image, points)
        if not candidates:
            raise AdapterError("segmenter produced no candidates")
        self._seq += 1
        records = []
        for k, (mask, score) in enumerate(candidates):
            path = self.work_dir / f"segment-{self._seq:06d}-{k}.png"
            img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L")
            img.save(path, format="PNG")
            records.append({"png": str(path), "score": float(score)})
        return {"ok": True, "masks": records}

    def serve(self, stdin: IO[str], stdout: IO[str]) -> None:
        """Answer requests until EOF on stdin."""
        for line in stdin:
            response = self.handle_line(line)
            if response is None:
                continue
            stdout.write(json.dumps(response) + "\n")
            stdout.flush()
