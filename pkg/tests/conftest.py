"""Shared fixtures: synthetic datasets on disk and banks built from them.

Dataset fixtures are session-scoped — generation and feature extraction are
the slow parts of the suite, and every consumer treats them as read-only.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion, when the gate ran."""
    gate = sys.modules.get("test_acceptance")
    results = getattr(gate, "RESULTS", None) if gate else None
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, note in results:
        status = "PASS" if passed else "FAIL"
        suffix = f" — {note}" if note else ""
        terminalreporter.write_line(f"{status}  {name}{suffix}")

from memoseg import MockBackend, QueryCase, SplitSpec, build_bank, split_dataset, synth_dataset
from memoseg.synth import write_dataset


@pytest.fixture(scope="session")
def mock_backend():
    return MockBackend()


class SynthCorpus:
    """A generated dataset written to disk plus the support/query split."""

    def __init__(self, root: Path, family: str, count: int, seed: int):
        self.root = root
        self.samples = synth_dataset(count, seed, family)
        write_dataset(self.samples, root / "images", root / "masks")
        self.by_id = {s.id: s for s in self.samples}
        self.support_ids, self.query_ids = split_dataset(
            [s.id for s in self.samples], SplitSpec()
        )

    def image_path(self, sample_id: str) -> str:
        return str(self.root / "images" / f"{sample_id}.png")

    def mask_path(self, sample_id: str) -> str:
        return str(self.root / "masks" / f"{sample_id}.png")

    def cases(self, ids: list[str]) -> list[QueryCase]:
        return [QueryCase(i, self.image_path(i), self.by_id[i].mask) for i in ids]

    def bank(self, backend, ids: list[str]):
        items = [
            (i, self.image_path(i), self.by_id[i].mask, backend.extract_features(self.image_path(i)))
            for i in ids
        ]
        return build_bank(items)


@pytest.fixture(scope="session")
def simple_corpus(tmp_path_factory, mock_backend) -> SynthCorpus:
    return SynthCorpus(tmp_path_factory.mktemp("simple"), "simple", 14, 3)


@pytest.fixture(scope="session")
def adversarial_corpus(tmp_path_factory, mock_backend) -> SynthCorpus:
    return SynthCorpus(tmp_path_factory.mktemp("adversarial"), "adversarial", 12, 5)


@pytest.fixture(scope="session")
def simple_bank(simple_corpus, mock_backend):
    return simple_corpus.bank(mock_backend, simple_corpus.support_ids)


@pytest.fixture(scope="session")
def adversarial_bank(adversarial_corpus, mock_backend):
    return adversarial_corpus.bank(mock_backend, adversarial_corpus.support_ids)


def random_unit_grid(rng: np.random.Generator, rows: int, cols: int, dim: int, **kw):
    """Random FeatureGrid of unit vectors (test helper)."""
    from memoseg import FeatureGrid, l2_normalize_grid

    data = rng.standard_normal((rows * cols, dim)).astype(np.float32)
    return l2_normalize_grid(FeatureGrid(rows, cols, dim, data, **kw))
