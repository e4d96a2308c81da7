"""Training-free segmentation by retrieval: an annotated exemplar memory is
queried per image, mask-constrained feature matching turns the best exemplar
into point prompts, and a promptable segmenter (mock or external model
runner) does the rest.
"""

from .backends import BridgeBackend, MockBackend, ScoredMask, make_backend, select_best
from .bank import (
    MemoryBank,
    MemoryEntry,
    build_bank,
    dedup,
    global_descriptor,
    load_bank,
    retrieve,
    save_bank,
)
from .errors import MemosegError
from .grids import (
    BinaryMask,
    FeatureGrid,
    PatchLabelGrid,
    Side,
    downsample_mask,
    l2_normalize_grid,
    patch_center,
)
from .harness import (
    EvalReport,
    QueryCase,
    SplitSpec,
    ablate_bg,
    ablate_memory,
    run_pipeline,
    split_dataset,
)
from .matching import MatchCandidate, MatchConfig, match_constrained, similarity_row
from .metrics import MaskMetrics, compute_metrics
from .msfg import read_features, read_mask, write_features, write_mask
from .prompts import (
    FgStrategy,
    PointPrompt,
    PromptPolicy,
    PromptSet,
    build_prompt_set,
    make_prompts,
    select_bg,
    select_fg,
)
from .synth import SynthSample, synth_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "BridgeBackend",
    "EvalReport",
    "FeatureGrid",
    "FgStrategy",
    "MaskMetrics",
    "MatchCandidate",
    "MatchConfig",
    "MemoryBank",
    "MemoryEntry",
    "MemosegError",
    "MockBackend",
    "PatchLabelGrid",
    "PointPrompt",
    "PromptPolicy",
    "PromptSet",
    "QueryCase",
    "ScoredMask",
    "SplitSpec",
    "SynthSample",
    "ablate_bg",
    "ablate_memory",
    "build_bank",
    "build_prompt_set",
    "compute_metrics",
    "dedup",
    "downsample_mask",
    "global_descriptor",
    "l2_normalize_grid",
    "load_bank",
    "make_backend",
    "make_prompts",
    "match_constrained",
    "patch_center",
    "read_features",
    "read_mask",
    "retrieve",
    "run_pipeline",
    "save_bank",
    "select_best",
    "select_bg",
    "select_fg",
    "Side",
    "similarity_row",
    "split_dataset",
    "synth_dataset",
    "write_dataset",
    "write_features",
    "write_mask",
]
