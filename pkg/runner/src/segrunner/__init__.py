"""Model-runner for the stdio bridge protocol.

Serves two operations over line-delimited JSON on stdin/stdout: "extract"
(dense patch features, written as an MSFG file) and "segment" (scored mask
PNGs for a set of point prompts).  The client decides what to do with them;
no retrieval, matching, or prompt logic lives here.

Adapters come in two flavors: deterministic stubs that run anywhere, and
real model wrappers (DINOv3 feature extractor, SAM2 promptable segmenter)
that load checkpoints lazily and only when configured.
"""

from .adapters import (
    INPUT_SIDE,
    PATCH_SIZE,
    STUB_FEATURE_DIM,
    AdapterError,
    DinoV3Extractor,
    Sam2Segmenter,
    StubExtractor,
    StubSegmenter,
)
from .msfg import MsfgFormatError, read_grid, write_grid
from .server import RunnerConfig, Server, StartupError

__version__ = "0.1.0"

__all__ = [
    "INPUT_SIDE",
    "PATCH_SIZE",
    "STUB_FEATURE_DIM",
    "AdapterError",
    "DinoV3Extractor",
    "MsfgFormatError",
    "RunnerConfig",
    "Sam2Segmenter",
    "Server",
    "StartupError",
    "StubExtractor",
    "StubSegmenter",
    "read_grid",
    "write_grid",
    "__version__",
]
