"""End-to-end evaluation: dataset splitting, the retrieval-to-prompt pipeline
over a query set, and the two standard ablations (background point budget,
memory pool size) plus leakage accounting.

Per-query failures (no foreground candidate, backend faults) are recorded as
zero-score rows and the run continues; a whole-image failure should drag the
aggregate down, not hide inside an exception.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .backends import Backend, select_best
from .bank import MemoryBank, MemoryEntry, retrieve
from .errors import ConfigError, EmptyInputError, MemosegError
from .grids import BinaryMask, FeatureGrid, downsample_mask
from .matching import MatchCandidate, MatchConfig, match_constrained
from .metrics import compute_metrics
from .prompts import FgStrategy, PromptPolicy, PromptSet, build_prompt_set, select_bg, select_fg


@dataclass(frozen=True)
class SplitSpec:
    ratio: float = 0.70  # support fraction
    seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"split ratio must be in (0, 1), got {self.ratio}")


def split_dataset(ids: list[str], spec: SplitSpec = SplitSpec()) -> tuple[list[str], list[str]]:
    """Deterministic support/query partition.

    Ids are ordered by a seed-keyed 64-bit hash (stable across platforms and
    runs, unlike library RNG state) and the first ceil(ratio * N) become
    support.  Duplicated ids would make the partition ambiguous, so they are
    rejected.
    """
    if not ids:
        raise EmptyInputError("cannot split an empty id list")
    if len(ids) < 2:
        raise ValueError("need at least 2 ids to form a support/query split")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")

    key = spec.seed.to_bytes(8, "little", signed=True)

    def rank(the_id: str) -> tuple[int, str]:
        digest = hashlib.blake2b(the_id.encode("utf-8"), key=key, digest_size=8).digest()
        return int.from_bytes(digest, "big"), the_id

    ordered = sorted(ids, key=rank)
    n_support = math.ceil(Fraction(spec.ratio) * len(ids))
    return ordered[:n_support], ordered[n_support:]


@dataclass(frozen=True)
class QueryCase:
    id: str
    image_path: str
    gt_mask: BinaryMask


@dataclass(frozen=True)
class ImageResult:
    id: str
    iou_fg: float = 0.0
    iou_bg: float = 0.0
    miou: float = 0.0
    mpa: float = 0.0
    acc: float = 0.0
    failed: bool = False
    failure: str | None = None
    leaked: bool | None = None  # None when no prediction was produced
    exemplar_id: str | None = None
    retrieval_similarity: float | None = None
    prompts: PromptSet | None = None

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "iou_fg": self.iou_fg,
            "iou_bg": self.iou_bg,
            "miou": self.miou,
            "mpa": self.mpa,
            "acc": self.acc,
            "failed": self.failed,
            "failure": self.failure,
            "leaked": self.leaked,
            "exemplar_id": self.exemplar_id,
            "retrieval_similarity": self.retrieval_similarity,
            "prompts": self.prompts.to_json_obj() if self.prompts is not None else None,
        }


@dataclass(frozen=True)
class EvalReport:
    per_image: tuple[ImageResult, ...]
    miou: float
    mpa: float
    acc: float
    config: dict

    @property
    def n_failures(self) -> int:
        return sum(1 for r in self.per_image if r.failed)

    @property
    def n_leaks(self) -> int:
        return sum(1 for r in self.per_image if r.leaked)

    def to_json_obj(self) -> dict:
        return {
            "aggregate": {"miou": self.miou, "mpa": self.mpa, "acc": self.acc},
            "failures": self.n_failures,
            "leaks": self.n_leaks,
            "per_image": [r.to_json_obj() for r in self.per_image],
            "config": self.config,
        }

    def render_table(self) -> str:
        header = ("id", "miou", "mpa", "acc", "status")
        rows = [header]
        for r in self.per_image:
            status = r.failure if r.failed else ("leaked" if r.leaked else "ok")
            rows.append((r.id, f"{r.miou:.4f}", f"{r.mpa:.4f}", f"{r.acc:.4f}", status or "ok"))
        rows.append(("mean", f"{self.miou:.4f}", f"{self.mpa:.4f}", f"{self.acc:.4f}", ""))
        widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _mean(values: list[float]) -> float:
    # fsum keeps aggregates invariant under query-order permutation
    return math.fsum(values) / len(values) if values else 0.0


def _build_report(results: list[ImageResult], config: dict) -> EvalReport:
    return EvalReport(
        per_image=tuple(results),
        miou=_mean([r.miou for r in results]),
        mpa=_mean([r.mpa for r in results]),
        acc=_mean([r.acc for r in results]),
        config=config,
    )


@dataclass(frozen=True)
class PreparedQuery:
    """Everything up to (and including) matching — independent of prompt policy."""

    case: QueryCase
    features: FeatureGrid
    exemplar: MemoryEntry
    similarity: float
    fg_candidates: tuple[MatchCandidate, ...]
    bg_candidates: tuple[MatchCandidate, ...]


def prepare_query(
    case: QueryCase, bank: MemoryBank, backend: Backend, match: MatchConfig
) -> PreparedQuery:
    """Extract, retrieve the nearest exemplar, and run constrained matching."""
    from .bank import global_descriptor

    features = backend.extract_features(case.image_path)
    descriptor = global_descriptor(features)
    exemplar, similarity = retrieve(descriptor, bank, 1)[0]
    labels = downsample_mask(exemplar.mask, exemplar.features.rows, exemplar.features.cols)
    fg_cands, bg_cands = match_constrained(features, exemplar.features, labels, match)
    return PreparedQuery(case, features, exemplar, similarity, tuple(fg_cands), tuple(bg_cands))


def segment_prepared(prep: PreparedQuery, backend: Backend, policy: PromptPolicy) -> ImageResult:
    """Prompt selection, segmentation, scoring, and leakage accounting for one query."""
    fg = select_fg(list(prep.fg_candidates), policy.fg_strategy)
    bg = select_bg(list(prep.bg_candidates), policy.bg_top_n, fg.point)
    prompts = build_prompt_set(fg, bg)
    pred = select_best(backend.segment(prep.case.image_path, prompts))
    m = compute_metrics(pred, prep.case.gt_mask)

    # leakage = the chosen mask swallowed a region the background evidence
    # voted against; judged against the full candidate set even when the
    # policy emitted fewer (or zero) points
    would_be = select_bg(list(prep.bg_candidates), None, fg.point)
    leaked = any(pred.data[p.y, p.x] for p in would_be)

    return ImageResult(
        id=prep.case.id,
        iou_fg=m.iou_fg,
        iou_bg=m.iou_bg,
        miou=m.miou,
        mpa=m.mpa,
        acc=m.acc,
        leaked=leaked,
        exemplar_id=prep.exemplar.id,
        retrieval_similarity=prep.similarity,
        prompts=prompts,
    )


def _failure_result(case: QueryCase, exc: MemosegError) -> ImageResult:
    return ImageResult(id=case.id, failed=True, failure=f"{type(exc).__name__}: {exc}")


def _run_config(
    bank: MemoryBank, backend: Backend, match: MatchConfig, policy: PromptPolicy
) -> dict:
    return {
        "backend": type(backend).__name__,
        "bank_size": len(bank),
        "tau_fg": match.tau_fg,
        "tau_bg": match.tau_bg,
        "fg_strategy": policy.fg_strategy.value,
        "bg_top_n": policy.bg_top_n,
    }


def run_pipeline(
    queries: list[QueryCase],
    bank: MemoryBank,
    backend: Backend,
    match: MatchConfig = MatchConfig(),
    policy: PromptPolicy = PromptPolicy(),
    jobs: int = 1,
) -> EvalReport:
    """Full pipeline over a query set; failures score zero and the run continues.

    Queries are independent, so jobs > 1 runs them on a thread pool; results
    keep input order and aggregates are order-invariant, so the report is
    identical either way.
    """
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")

    def one(case: QueryCase) -> ImageResult:
        try:
            prep = prepare_query(case, bank, backend, match)
            return segment_prepared(prep, backend, policy)
        except MemosegError as exc:
            return _failure_result(case, exc)

    if jobs == 1:
        results = [one(case) for case in queries]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, queries))
    return _build_report(results, _run_config(bank, backend, match, policy))


def bg_mode_label(bg_top_n: int | None) -> str:
    if bg_top_n is None:
        return "all"
    if bg_top_n == 0:
        return "fg-only"
    return f"top{bg_top_n}"


def ablate_bg(
    queries: list[QueryCase],
    bank: MemoryBank,
    backend: Backend,
    modes: tuple[int | None, ...] = (5, 20, None),
    match: MatchConfig = MatchConfig(),
    fg_strategy: FgStrategy = FgStrategy.MOST_CONFIDENT,
    memoize: bool = True,
) -> list[tuple[str, EvalReport]]:
    """One evaluation per background budget.

    Extraction, retrieval, and matching do not depend on the budget, so with
    ``memoize`` they run once per query and only prompting/segmentation is
    repeated.  memoize=False recomputes everything (must agree exactly).
    """
    policies = [replace(PromptPolicy(fg_strategy=fg_strategy), bg_top_n=m) for m in modes]
    if not memoize:
        return [
            (bg_mode_label(m), run_pipeline(queries, bank, backend, match, p))
            for m, p in zip(modes, policies)
        ]

    prepared: list[PreparedQuery | MemosegError] = []
    for case in queries:
        try:
            prepared.append(prepare_query(case, bank, backend, match))
        except MemosegError as exc:
            prepared.append(exc)

    out = []
    for mode, policy in zip(modes, policies):
        results = []
        for case, prep in zip(queries, prepared):
            if isinstance(prep, MemosegError):
                results.append(_failure_result(case, prep))
                continue
            try:
                results.append(segment_prepared(prep, backend, policy))
            except MemosegError as exc:
                results.append(_failure_result(case, exc))
        out.append(
            (bg_mode_label(mode), _build_report(results, _run_config(bank, backend, match, policy)))
        )
    return out


def sample_pools(n_support: int, pool_sizes: tuple[int, ...], seed: int) -> list[np.ndarray]:
    """Seeded nested subsets of the support indices, one per requested size.

    Pools share a single shuffled order (pool of size s = first s entries),
    so smaller pools are subsets of larger ones and a query's nearest
    exemplar, once sampled into the smallest pool, is present in all.
    """
    for s in pool_sizes:
        if not 1 <= s <= n_support:
            raise ConfigError(f"pool size {s} outside [1, {n_support}]")
    order = np.random.default_rng(seed).permutation(n_support)
    return [order[:s] for s in pool_sizes]


def ablate_memory(
    queries: list[QueryCase],
    support_bank: MemoryBank,
    backend: Backend,
    pool_sizes: tuple[int, ...] = (1, 10, 20),
    seed: int = 0,
    match: MatchConfig = MatchConfig(),
    policy: PromptPolicy = PromptPolicy(),
) -> list[tuple[str, EvalReport]]:
    """One evaluation per memory pool size, each pool a seeded sample of the
    support bank (nested across sizes; see sample_pools)."""
    pools = sample_pools(len(support_bank), pool_sizes, seed)
    out = []
    for size, picked in zip(pool_sizes, pools):
        entries = tuple(support_bank.entries[i] for i in picked)
        pool_bank = MemoryBank(entries, support_bank.index[picked])
        report = run_pipeline(queries, pool_bank, backend, match, policy)
        report = replace(report, config={**report.config, "pool_size": size, "pool_seed": seed})
        out.append((f"pool{size}", report))
    return out


def render_comparison(rows: list[tuple[str, EvalReport]]) -> str:
    """Aligned table over ablation rows: one line per configuration."""
    header = ("config", "miou", "mpa", "acc", "failures", "leaks")
    table = [header]
    for label, report in rows:
        table.append(
            (
                label,
                f"{report.miou:.4f}",
                f"{report.mpa:.4f}",
                f"{report.acc:.4f}",
                str(report.n_failures),
                str(report.n_leaks),
            )
        )
    widths = [max(len(row[c]) for row in table) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
