"""Exemplar memory: global descriptors, exact cosine retrieval, dedup, persistence.

The bank is an ordered list of exemplars plus a contiguous (N, D) matrix of
their global descriptors.  Retrieval is an exact flat scan — a dot product
against every row — because banks here are a few hundred entries at most and
exactness is part of the contract (the nearest exemplar is an argmax, not an
approximation).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import msfg
from .errors import (
    ChecksumMismatchError,
    DegenerateDescriptorError,
    DimMismatchError,
    DuplicateIdError,
    EmptyBankError,
    MissingFileError,
    MissingManifestError,
)
from .grids import BinaryMask, FeatureGrid, ZERO_NORM_FLOOR

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
DEDUP_THRESHOLD = 0.995


@dataclass(frozen=True)
class MemoryEntry:
    """One exemplar: image path, its mask, patch features, and a global descriptor."""

    id: str
    image_path: str
    mask: BinaryMask
    features: FeatureGrid
    global_descriptor: np.ndarray

    def __post_init__(self):
        desc = np.ascontiguousarray(self.global_descriptor, dtype=np.float32)
        if desc.ndim != 1:
            raise ValueError(f"descriptor must be 1-D, got shape {desc.shape}")
        desc.setflags(write=False)
        object.__setattr__(self, "global_descriptor", desc)


@dataclass(frozen=True)
class MemoryBank:
    """Ordered exemplars plus the (N, D) descriptor matrix scanned at query time."""

    entries: tuple[MemoryEntry, ...]
    index: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.ascontiguousarray(self.index, dtype=np.float32)
        idx.setflags(write=False)
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self.index.shape[1]

    def entry(self, entry_id: str) -> MemoryEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)


def global_descriptor(features: FeatureGrid) -> np.ndarray:
    """Mean of all patch vectors, re-normalized to unit length (float32).

    Raises DegenerateDescriptorError when the mean vector collapses below
    1e-12 (mutually cancelling patches); a descriptor with no direction
    cannot rank exemplars.
    """
    mean = features.data.astype(np.float64).mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < ZERO_NORM_FLOOR:
        raise DegenerateDescriptorError(
            f"mean patch vector has norm {norm:.3e}; grid is directionless"
        )
    return (mean / norm).astype(np.float32)


def build_bank(items: list[tuple[str, str, BinaryMask, FeatureGrid]]) -> MemoryBank:
    """Assemble a bank from (id, image_path, mask, features) tuples, in order.

    Descriptors are computed here; ids must be unique and all feature grids
    must share one embedding dimension.
    """
    if not items:
        raise EmptyBankError("cannot build a bank from zero entries")
    seen: set[str] = set()
    entries: list[MemoryEntry] = []
    dim = items[0][3].dim
    for entry_id, image_path, mask, features in items:
        if entry_id in seen:
            raise DuplicateIdError(f"duplicate entry id {entry_id!r}")
        seen.add(entry_id)
        if features.dim != dim:
            raise DimMismatchError(
                f"entry {entry_id!r} has dim {features.dim}, bank uses {dim}"
            )
        entries.append(
            MemoryEntry(entry_id, str(image_path), mask, features, global_descriptor(features))
        )
    index = np.stack([e.global_descriptor for e in entries])
    return MemoryBank(tuple(entries), index)


def retrieve(
    query_descriptor: np.ndarray, bank: MemoryBank, k: int = 1
) -> list[tuple[MemoryEntry, float]]:
    """Top-k entries by dot product with the query descriptor, descending.

    Exact scan over the whole index.  Ties rank by insertion order (earlier
    entry wins), so results are fully deterministic.
    """
    if len(bank) == 0:
        raise EmptyBankError("retrieve on an empty bank")
    query = np.ascontiguousarray(query_descriptor, dtype=np.float32)
    if query.shape != (bank.dim,):
        raise DimMismatchError(f"query shape {query.shape}, bank dim {bank.dim}")
    if not 1 <= k <= len(bank):
        raise ValueError(f"k={k} outside [1, {len(bank)}]")
    sims = bank.index.astype(np.float64) @ query.astype(np.float64)
    # stable order: similarity descending, then insertion order ascending
    order = np.lexsort((np.arange(len(bank)), -sims))[:k]
    return [(bank.entries[i], float(sims[i])) for i in order]


def dedup(bank: MemoryBank, threshold: float = DEDUP_THRESHOLD) -> tuple[MemoryBank, list[str]]:
    """Drop every entry whose descriptor matches an earlier kept entry at
    similarity >= threshold.  Greedy and order-dependent by design, hence
    idempotent.  Returns (new bank, removed ids).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    sims = bank.index.astype(np.float64) @ bank.index.astype(np.float64).T
    kept: list[int] = []
    removed: list[str] = []
    for i in range(len(bank)):
        if kept and np.any(sims[i, kept] >= threshold):
            removed.append(bank.entries[i].id)
        else:
            kept.append(i)
    new_entries = tuple(bank.entries[i] for i in kept)
    return MemoryBank(new_entries, bank.index[kept]), removed


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_bank(bank: MemoryBank, directory: str | Path) -> Path:
    """Write the bank as a directory: manifest.json plus one MSFG and one PNG
    per entry.  Descriptors live inline in the manifest; the feature files
    additionally carry sha256 checksums so corruption is caught on load.
    Returns the manifest path.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for e in bank.entries:
        feat_name = f"{e.id}.msfg"
        mask_name = f"{e.id}.mask.png"
        msfg.write_features(e.features, root / feat_name)
        msfg.write_mask(e.mask, root / mask_name)
        records.append(
            {
                "id": e.id,
                "image": e.image_path,
                "mask": mask_name,
                "features": feat_name,
                "descriptor": [float(v) for v in e.global_descriptor],
                "sha256": _sha256(root / feat_name),
            }
        )
    manifest = {"version": MANIFEST_VERSION, "dim": bank.dim, "entries": records}
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_bank(directory: str | Path) -> MemoryBank:
    """Load a bank saved by :func:`save_bank`.

    Raises MissingManifestError, MissingFileError (naming the entry id), or
    ChecksumMismatchError when the directory is missing pieces or a feature
    file no longer matches its recorded digest.
    """
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingManifestError(f"no {MANIFEST_NAME} in {root}")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise MissingManifestError(
            f"{manifest_path}: manifest version {version!r}, expected {MANIFEST_VERSION}"
        )
    entries: list[MemoryEntry] = []
    for rec in manifest["entries"]:
        entry_id = rec["id"]
        feat_path = root / rec["features"]
        mask_path = root / rec["mask"]
        if not feat_path.is_file():
            raise MissingFileError(entry_id, str(feat_path))
        if not mask_path.is_file():
            raise MissingFileError(entry_id, str(mask_path))
        digest = rec.get("sha256")
        if digest is not None and _sha256(feat_path) != digest:
            raise ChecksumMismatchError(
                f"entry {entry_id!r}: {feat_path.name} does not match its recorded sha256"
            )
        features = msfg.read_features(feat_path)
        mask = msfg.read_mask(mask_path)
        descriptor = np.asarray(rec["descriptor"], dtype=np.float32)
        if descriptor.shape != (manifest["dim"],):
            raise DimMismatchError(
                f"entry {entry_id!r}: descriptor dim {descriptor.shape[0]}, "
                f"manifest says {manifest['dim']}"
            )
        entries.append(MemoryEntry(entry_id, rec["image"], mask, features, descriptor))
    if not entries:
        raise EmptyBankError(f"{manifest_path} lists no entries")
    index = np.stack([e.global_descriptor for e in entries])
    return MemoryBank(tuple(entries), index)
