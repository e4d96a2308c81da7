"""Prompt selection: anchor strategies, background top-n, set assembly."""

import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memoseg import (
    FgStrategy,
    PointPrompt,
    PromptPolicy,
    PromptSet,
    Side,
    build_prompt_set,
    make_prompts,
    select_bg,
    select_fg,
)
from memoseg.errors import NoForegroundError
from memoseg.matching import MatchCandidate


def cand(query_patch, sim, point, side=Side.FG) -> MatchCandidate:
    return MatchCandidate(query_patch, 0, sim, point, side)


class TestSelectFg:
    def test_most_confident_takes_max(self):
        cands = [cand(0, 0.91, (8, 8)), cand(1, 0.97, (24, 8)), cand(2, 0.93, (40, 8))]
        p = select_fg(cands, FgStrategy.MOST_CONFIDENT)
        assert p == PointPrompt(24, 8, 1)

    def test_most_confident_tie_lowest_index(self):
        cands = [cand(3, 0.95, (8, 24)), cand(1, 0.95, (24, 8)), cand(5, 0.95, (40, 40))]
        p = select_fg(cands, FgStrategy.MOST_CONFIDENT)
        assert p.point == (24, 8)

    def test_kmeans_picks_nearest_to_centroid(self):
        # square corners plus a center point: centroid is the center
        corners = [cand(i, 0.9, pt) for i, pt in enumerate([(0, 0), (0, 40), (40, 0), (40, 40)])]
        middle = cand(9, 0.5, (20, 20))
        p = select_fg(corners + [middle], FgStrategy.KMEANS_REPRESENTATIVE)
        assert p.point == (20, 20)

    def test_kmeans_corner_tie_prefers_similarity_then_index(self):
        corners = [
            cand(0, 0.90, (0, 0)),
            cand(1, 0.95, (0, 40)),
            cand(2, 0.95, (40, 0)),
            cand(3, 0.90, (40, 40)),
        ]
        # all four are equidistant from the centroid (20, 20)
        p = select_fg(corners, FgStrategy.KMEANS_REPRESENTATIVE)
        assert p.point == (0, 40)

    def test_label_is_foreground(self):
        p = select_fg([cand(0, 0.9, (8, 8))], FgStrategy.MOST_CONFIDENT)
        assert p.label == 1

    def test_empty_raises(self):
        for strategy in FgStrategy:
            with pytest.raises(NoForegroundError):
                select_fg([], strategy)


class TestSelectBg:
    def bg_cands(self):
        sims = [0.99, 0.95, 0.95, 0.91, 0.90]
        return [cand(i, s, (8 + 16 * i, 8), Side.BG) for i, s in enumerate(sims)]

    def test_all_mode_keeps_everything_in_patch_order(self):
        pts = select_bg(self.bg_cands(), None)
        assert [p.point for p in pts] == [(8, 8), (24, 8), (40, 8), (56, 8), (72, 8)]
        assert all(p.label == 0 for p in pts)

    def test_top_n_by_similarity_emitted_in_patch_order(self):
        pts = select_bg(self.bg_cands(), 3)
        # keeps sims {0.99, 0.95, 0.95}; the 0.95 tie resolves to patches 1, 2
        assert [p.point for p in pts] == [(8, 8), (24, 8), (40, 8)]

    def test_top_n_larger_than_pool(self):
        pts = select_bg(self.bg_cands(), 99)
        assert len(pts) == 5

    def test_zero_keeps_nothing(self):
        assert select_bg(self.bg_cands(), 0) == []

    def test_fg_collision_dropped_before_counting(self):
        cands = self.bg_cands()
        pts = select_bg(cands, 4, fg_point=(8, 8))
        # the strongest candidate sits on the anchor; top-4 comes from the rest
        assert [p.point for p in pts] == [(24, 8), (40, 8), (56, 8), (72, 8)]

    def test_empty_selection_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="memoseg.prompts"):
            pts = select_bg([], None)
        assert pts == []
        assert any("background" in r.message for r in caplog.records)


class TestBuildPromptSet:
    def test_anchor_first_then_bg(self):
        fg = PointPrompt(8, 8, 1)
        bg = [PointPrompt(24, 8, 0), PointPrompt(40, 8, 0)]
        ps = build_prompt_set(fg, bg)
        assert ps.points[0] == fg
        assert [p.label for p in ps.points] == [1, 0, 0]

    def test_bg_at_anchor_dropped(self):
        ps = build_prompt_set(PointPrompt(8, 8, 1), [PointPrompt(8, 8, 0), PointPrompt(24, 8, 0)])
        assert len(ps) == 2
        assert ps.points[1].point == (24, 8)

    def test_duplicate_bg_dropped(self):
        ps = build_prompt_set(
            PointPrompt(8, 8, 1),
            [PointPrompt(24, 8, 0), PointPrompt(24, 8, 0), PointPrompt(40, 8, 0)],
        )
        assert [p.point for p in ps.points] == [(8, 8), (24, 8), (40, 8)]

    def test_wrong_labels_rejected(self):
        with pytest.raises(ValueError):
            build_prompt_set(PointPrompt(8, 8, 0), [])
        with pytest.raises(ValueError):
            build_prompt_set(PointPrompt(8, 8, 1), [PointPrompt(24, 8, 1)])

    def test_json_round_trip(self):
        ps = build_prompt_set(PointPrompt(8, 8, 1), [PointPrompt(24, 8, 0)])
        assert PromptSet.from_json(ps.to_json()) == ps

    def test_json_shape(self):
        ps = build_prompt_set(PointPrompt(3, 4, 1), [])
        assert ps.to_json_obj() == {"points": [{"x": 3, "y": 4, "label": 1}]}


class TestPolicy:
    def test_negative_top_n_rejected(self):
        with pytest.raises(ValueError):
            PromptPolicy(bg_top_n=-1)

    def test_zero_and_none_allowed(self):
        assert PromptPolicy(bg_top_n=0).bg_top_n == 0
        assert PromptPolicy(bg_top_n=None).bg_top_n is None

    def test_bad_label_rejected(self):
        with pytest.raises(ValueError):
            PointPrompt(0, 0, 2)


def random_candidates(draw_sims, n_fg, n_bg):
    fg = [cand(i, draw_sims[i], (8 + 16 * i, 8)) for i in range(n_fg)]
    bg = [
        cand(i, draw_sims[n_fg + i], (8 + 16 * i, 24), Side.BG)
        for i in range(n_bg)
    ]
    return fg, bg


class TestMakePromptsProperties:
    @given(
        sims=st.lists(st.floats(0.9, 1.0), min_size=2, max_size=24),
        top_n=st.one_of(st.none(), st.integers(0, 24)),
    )
    @settings(max_examples=100, deadline=None)
    def test_exactly_one_positive_and_it_leads(self, sims, top_n):
        n_fg = max(1, len(sims) // 2)
        fg, bg = random_candidates(sims, n_fg, len(sims) - n_fg)
        ps = make_prompts(fg, bg, PromptPolicy(bg_top_n=top_n))
        labels = [p.label for p in ps.points]
        assert labels.count(1) == 1
        assert labels[0] == 1

    @given(sims=st.lists(st.floats(0.9, 1.0), min_size=4, max_size=24))
    @settings(max_examples=100, deadline=None)
    def test_top_n_nested(self, sims):
        n_fg = 1
        fg, bg = random_candidates(sims, n_fg, len(sims) - n_fg)
        for n in range(len(bg)):
            smaller = make_prompts(fg, bg, PromptPolicy(bg_top_n=n))
            larger = make_prompts(fg, bg, PromptPolicy(bg_top_n=n + 1))
            assert set(smaller.points) <= set(larger.points)

    @given(
        millis=st.lists(st.integers(10, 990), min_size=2, max_size=16, unique=True),
        scale=st.floats(0.5, 2.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_positive_rescale_keeps_selection(self, millis, scale):
        # ranking depends only on similarity order, so a positive rescale of
        # all sims must not change which points are chosen; sims sit on a
        # coarse grid so rescaling cannot collapse two of them
        sims = [m / 1000.0 for m in millis]
        n_fg = 1
        fg1, bg1 = random_candidates(sims, n_fg, len(sims) - n_fg)
        scaled = [s * scale for s in sims]
        fg2, bg2 = random_candidates(scaled, n_fg, len(scaled) - n_fg)
        p1 = make_prompts(fg1, bg1, PromptPolicy(bg_top_n=max(1, len(sims) // 2)))
        p2 = make_prompts(fg2, bg2, PromptPolicy(bg_top_n=max(1, len(sims) // 2)))
        assert p1 == p2
