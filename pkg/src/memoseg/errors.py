"""Exception hierarchy for the segmentation engine.

Grouped the way the CLI maps them to exit codes: file/format problems,
backend (bridge/mock) failures, and pipeline-level failures.
"""

from __future__ import annotations


class MemosegError(Exception):
    """Base class for all engine errors."""


# --- tensor / file format ---------------------------------------------------

class ZeroVectorError(MemosegError):
    """A patch vector has (near-)zero norm and cannot be normalized."""

    def __init__(self, patch_index: int, norm: float):
        self.patch_index = patch_index
        self.norm = norm
        super().__init__(f"patch {patch_index} has norm {norm:.3e} < 1e-12")


class BadMagicError(MemosegError):
    """Feature file does not start with the MSFG magic bytes."""


class VersionMismatchError(MemosegError):
    """Feature file declares an unsupported format version."""


class TruncatedPayloadError(MemosegError):
    """Feature file payload is shorter (or longer) than the header claims."""


class DimensionOverflowError(MemosegError):
    """Header dimension field is zero, exceeds u32, or implies an absurd payload."""


class EmptyInputError(MemosegError):
    """An operation received an empty mask, list, or dataset."""


# --- memory bank -------------------------------------------------------------

class DuplicateIdError(MemosegError):
    """Two memory entries share the same id."""


class DimMismatchError(MemosegError):
    """Embedding / grid / mask dimensions do not agree."""


class EmptyBankError(MemosegError):
    """Retrieval against a bank with no entries."""


class DegenerateDescriptorError(MemosegError):
    """Mean-pooled descriptor has near-zero norm."""


class MissingManifestError(MemosegError):
    """Bank directory has no manifest.json."""


class MissingFileError(MemosegError):
    """A file referenced by the bank manifest does not exist."""

    def __init__(self, entry_id: str, path: str):
        self.entry_id = entry_id
        self.path = path
        super().__init__(f"entry {entry_id!r}: missing file {path}")


class ChecksumMismatchError(MemosegError):
    """A bank file's content does not match its recorded checksum."""


# --- correspondence / prompts ------------------------------------------------

class EmptySubsetError(MemosegError):
    """Argmax requested over an empty patch-index subset."""


class DegenerateExemplarError(MemosegError):
    """The retrieved exemplar has no FG (or no BG) patches after downsampling."""

    def __init__(self, side: str):
        self.side = side
        super().__init__(f"exemplar has no {side.upper()} patches")


class NoForegroundError(MemosegError):
    """No foreground candidate survived the similarity threshold."""


class PromptError(MemosegError):
    """Prompt set malformed for the segmenter (e.g. FG point out of bounds)."""


# --- backends ----------------------------------------------------------------

class BackendError(MemosegError):
    """Backend failed: bridge protocol error, dead runner, bad model output."""

    def __init__(self, message: str, transcript: list[str] | None = None):
        self.transcript = list(transcript) if transcript else []
        if self.transcript:
            tail = " | ".join(self.transcript[-8:])
            message = f"{message} [stderr: {tail}]"
        super().__init__(message)


class NoCandidatesError(MemosegError):
    """Segmenter returned zero candidate masks to select from."""


# --- configuration -----------------------------------------------------------

class ConfigError(MemosegError):
    """Invalid run configuration (thresholds, pool sizes, flags)."""
