"""Mask-constrained patch matching against a brute-force double-loop oracle."""

import numpy as np
import pytest

from memoseg import (
    FeatureGrid,
    MatchConfig,
    PatchLabelGrid,
    Side,
    l2_normalize_grid,
    match_constrained,
    patch_center,
    similarity_row,
)
from memoseg.errors import DegenerateExemplarError, EmptySubsetError


def unit_grid(rng, rows, cols, dim, source_dims=None) -> FeatureGrid:
    data = rng.standard_normal((rows * cols, dim)).astype(np.float32)
    dims = source_dims or (rows * 16, cols * 16)
    return l2_normalize_grid(FeatureGrid(rows, cols, dim, data, 16, dims))


def labels_half_fg(rows, cols) -> PatchLabelGrid:
    """Top half foreground, bottom half background."""
    lab = np.zeros((rows, cols), bool)
    lab[: rows // 2] = True
    return PatchLabelGrid(rows, cols, lab)


def brute_force(query, ref, ref_labels, config):
    """Independent reimplementation: per query patch, scan each subset with an
    explicit loop, keep the first max, accept at or above the threshold."""
    out = []
    fg = [i for i in range(ref.patch_count) if ref_labels.labels.flat[i]]
    bg = [i for i in range(ref.patch_count) if not ref_labels.labels.flat[i]]
    for i in range(query.patch_count):
        qv = query.vector(i).astype(np.float64)
        for subset, side, tau in ((fg, Side.FG, config.tau_fg), (bg, Side.BG, config.tau_bg)):
            best_j, best_sim = None, -np.inf
            for j in subset:
                s = float(qv @ ref.vector(j).astype(np.float64))
                if s > best_sim:
                    best_j, best_sim = j, s
            if best_j is not None and best_sim >= tau:
                out.append((i, best_j, best_sim, side))
    return out


class TestSimilarityRow:
    def test_self_match_is_one(self):
        g = unit_grid(np.random.default_rng(0), 2, 3, 8)
        for i in range(g.patch_count):
            j, sim = similarity_row(g, i, g, list(range(g.patch_count)))
            assert j == i
            assert sim == pytest.approx(1.0, abs=1e-6)

    def test_singleton_subset(self):
        rng = np.random.default_rng(1)
        q, r = unit_grid(rng, 1, 2, 4), unit_grid(rng, 1, 3, 4)
        j, sim = similarity_row(q, 0, r, [2])
        assert j == 2
        oracle = float(q.vector(0).astype(np.float64) @ r.vector(2).astype(np.float64))
        assert sim == oracle

    def test_first_max_wins_on_tie(self):
        v = np.array([1.0, 0.0], np.float32)
        q = l2_normalize_grid(FeatureGrid(1, 1, 2, v.reshape(1, 2), 16, (16, 16)))
        r = l2_normalize_grid(FeatureGrid(1, 3, 2, np.stack([v, v, v]), 16, (16, 48)))
        j, _ = similarity_row(q, 0, r, [1, 2])
        assert j == 1

    def test_empty_subset(self):
        g = unit_grid(np.random.default_rng(2), 1, 2, 4)
        with pytest.raises(EmptySubsetError):
            similarity_row(g, 0, g, [])


class TestMatchConstrained:
    def test_identity_match_recovers_labels(self):
        # query == exemplar: each patch matches itself at similarity ~1 on its
        # own side; cross-side sims are random and fall under the threshold
        rng = np.random.default_rng(3)
        g = unit_grid(rng, 4, 4, 16)
        labels = labels_half_fg(4, 4)
        fg, bg = match_constrained(g, g, labels, MatchConfig(0.9, 0.9))
        assert [c.query_patch for c in fg] == list(labels.fg_indices())
        assert [c.query_patch for c in bg] == list(labels.bg_indices())
        for c in fg + bg:
            assert c.ref_patch == c.query_patch
            assert c.similarity == pytest.approx(1.0, abs=1e-6)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        config_grid = [MatchConfig(t, t) for t in (0.5, 0.9)] + [MatchConfig(0.3, 0.8)]
        for trial in range(30):
            rows, cols = int(rng.integers(1, 5)), int(rng.integers(2, 5))
            q = unit_grid(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)), 8)
            r = unit_grid(rng, rows, cols, 8)
            lab = rng.random((rows, cols)) > 0.5
            if lab.all():
                lab.flat[0] = False
            if not lab.any():
                lab.flat[0] = True
            labels = PatchLabelGrid(rows, cols, lab)
            config = config_grid[trial % len(config_grid)]

            fg, bg = match_constrained(q, r, labels, config)
            got = sorted((c.query_patch, c.ref_patch, c.side, c.similarity) for c in fg + bg)
            expected = sorted((i, j, side, s) for i, j, s, side in brute_force(q, r, labels, config))
            assert [g[:3] for g in got] == [e[:3] for e in expected]
            # matmul and loop accumulate in different orders: ulp-level slack
            assert [g[3] for g in got] == pytest.approx([e[3] for e in expected], abs=1e-12)

    def test_candidate_points_are_patch_centers(self):
        rng = np.random.default_rng(5)
        q = unit_grid(rng, 2, 2, 8, source_dims=(64, 64))
        r = unit_grid(rng, 2, 2, 8)
        fg, bg = match_constrained(q, r, labels_half_fg(2, 2), MatchConfig(0.1, 0.1))
        for c in fg + bg:
            assert c.point == patch_center(c.query_patch, q)

    def test_orthogonal_grids_match_nothing(self):
        eye = np.eye(8, dtype=np.float32)
        q = FeatureGrid(1, 4, 8, eye[:4], 16, (16, 64))
        r = FeatureGrid(1, 4, 8, eye[4:], 16, (16, 64))
        labels = PatchLabelGrid(1, 4, np.array([[True, True, False, False]]))
        fg, bg = match_constrained(q, r, labels, MatchConfig(0.999, 0.999))
        assert fg == [] and bg == []

    def test_acceptance_monotone_in_threshold(self):
        rng = np.random.default_rng(6)
        q = unit_grid(rng, 3, 3, 8)
        r = unit_grid(rng, 3, 3, 8)
        labels = labels_half_fg(3, 3)
        sizes = []
        for tau in (0.1, 0.5, 0.9, 0.99):
            fg, bg = match_constrained(q, r, labels, MatchConfig(tau, tau))
            sizes.append((len(fg), len(bg)))
        for (f1, b1), (f2, b2) in zip(sizes, sizes[1:]):
            assert f2 <= f1 and b2 <= b1

    def test_exemplar_permutation_preserves_similarities(self):
        # shuffling exemplar patches (labels shuffled in lockstep) must not
        # change which query patches pass or at what similarity
        rng = np.random.default_rng(7)
        q = unit_grid(rng, 2, 3, 8)
        data = rng.standard_normal((6, 8)).astype(np.float32)
        lab = np.array([[True, False, True], [False, False, True]])
        perm = rng.permutation(6)

        r1 = l2_normalize_grid(FeatureGrid(2, 3, 8, data, 16, (32, 48)))
        r2 = l2_normalize_grid(FeatureGrid(2, 3, 8, data[perm], 16, (32, 48)))
        lab2 = lab.flatten()[perm].reshape(2, 3)

        config = MatchConfig(0.2, 0.2)
        fg1, bg1 = match_constrained(q, r1, PatchLabelGrid(2, 3, lab), config)
        fg2, bg2 = match_constrained(q, r2, PatchLabelGrid(2, 3, lab2), config)
        for a, b in ((fg1, fg2), (bg1, bg2)):
            assert [(c.query_patch, c.side) for c in a] == [(c.query_patch, c.side) for c in b]
            sims1 = [c.similarity for c in a]
            sims2 = [c.similarity for c in b]
            assert sims1 == pytest.approx(sims2, abs=1e-6)

    def test_exemplar_without_fg_rejected(self):
        rng = np.random.default_rng(8)
        g = unit_grid(rng, 2, 2, 4)
        all_bg = PatchLabelGrid(2, 2, np.zeros((2, 2), bool))
        with pytest.raises(DegenerateExemplarError) as err:
            match_constrained(g, g, all_bg, MatchConfig())
        assert "FG" in str(err.value)

    def test_exemplar_without_bg_rejected(self):
        rng = np.random.default_rng(9)
        g = unit_grid(rng, 2, 2, 4)
        all_fg = PatchLabelGrid(2, 2, np.ones((2, 2), bool))
        with pytest.raises(DegenerateExemplarError) as err:
            match_constrained(g, g, all_fg, MatchConfig())
        assert "BG" in str(err.value)

    def test_config_validation(self):
        assert MatchConfig(tau_fg=0.0).tau_fg == 0.0  # 0 is a legal floor
        with pytest.raises(ValueError):
            MatchConfig(tau_fg=-0.1)
        with pytest.raises(ValueError):
            MatchConfig(tau_bg=1.5)
