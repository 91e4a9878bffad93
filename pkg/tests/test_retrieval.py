from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from gridflow.gateway import ChatResponse, MockEmbedder, TokenUsage
from gridflow.retrieval import (
    ArchiveError,
    DegenerateProfile,
    EmbeddingCache,
    EmbeddingError,
    ExemplarRecord,
    KeepAllFilter,
    ParseFailure,
    RetrievalMode,
    adaptive_cutoff,
    cosine_similarity,
    cutoff_objective,
    dump_archive,
    embed_texts,
    parse_archive,
    parse_filter_output,
    rank_by_similarity,
    render_filter_prompt,
    segment_fit_rmse,
    select_exemplars,
)
from gridflow.retrieval._kernels import KERNELS
from gridflow.workflow import ExecutionTrace, ToolInvocation
from oracles import brute_force_cutoff, fit_rmse, two_piece_profile

descending = st.integers(4, 60).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-1, 1, allow_nan=False))
).map(lambda a: np.sort(a)[::-1].copy())


def rec(i, query=None, tool="list_feeders"):
    return ExemplarRecord(f"r{i}", query or f"query number {i}",
                          ExecutionTrace((ToolInvocation(tool, {}),)))


class TestSimilarity:
    def test_cosine_bounds(self):
        assert cosine_similarity([1, 0], [1, 0]) == 1.0
        assert cosine_similarity([1, 0], [-1, 0]) == -1.0

    @pytest.mark.parametrize("u,v", [([0, 0], [1, 0]), ([1, 0], [1, 0, 0]), ([], [])])
    def test_cosine_errors(self, u, v):
        with pytest.raises(EmbeddingError):
            cosine_similarity(u, v)

    def test_rank_ties_by_index(self):
        prof = rank_by_similarity([1, 0], [[0, 1], [1, 0], [1, 0], [1, 1]])
        assert prof.original_index == (1, 2, 3, 0)
        assert prof.scores[0] == prof.scores[1] == 1.0

    @given(arrays(np.float64, (12, 5), elements=st.floats(-5, 5, allow_nan=False)),
           arrays(np.float64, 5, elements=st.floats(-5, 5, allow_nan=False)))
    def test_rank_is_sorted_permutation(self, mat, q):
        assume(np.linalg.norm(q) > 1e-3 and np.all(np.linalg.norm(mat, axis=1) > 1e-3))
        prof = rank_by_similarity(q, list(mat))
        assert sorted(prof.original_index) == list(range(12))
        assert all(a >= b for a, b in zip(prof.scores, prof.scores[1:]))
        assert all(-1.0 <= s <= 1.0 for s in prof.scores)


class TestCutoff:
    def test_degenerate(self):
        with pytest.raises(DegenerateProfile):
            adaptive_cutoff([0.9, 0.5, 0.1])

    def test_segment_rmse_matches_lstsq(self):
        y = np.array([0.9, 0.85, 0.7, 0.2, 0.15, 0.1])
        assert segment_fit_rmse(y, 2, 5) == pytest.approx(fit_rmse(y, 2, 5), abs=1e-12)
        with pytest.raises(ValueError):
            segment_fit_rmse(y, 3, 3)

    def test_clear_knee(self):
        assert adaptive_cutoff([0.98, 0.96, 0.94, 0.92, 0.3, 0.29, 0.28, 0.27, 0.26]) == 4

    @given(descending)
    def test_range_and_oracle(self, y):
        m = adaptive_cutoff(y)
        assert 2 <= m <= len(y) - 2
        assert m == brute_force_cutoff(y)

    @given(descending, st.floats(0.1, 10), st.floats(-1, 1))
    def test_affine_invariance(self, y, scale, shift):
        # positive affine rescaling multiplies the objective by ``scale``
        obj = cutoff_objective(y)
        obj2 = cutoff_objective(scale * y + shift)
        np.testing.assert_allclose(obj2, scale * obj, atol=1e-9)

    @given(st.integers(6, 80), st.data())
    def test_two_piece_recovery(self, n, data):
        m_star = data.draw(st.integers(2, n - 2))
        seed = data.draw(st.integers(0, 2**32 - 1))
        y = two_piece_profile(np.random.default_rng(seed), n, m_star)
        assert adaptive_cutoff(y) == m_star

    @given(descending)
    def test_kernels_agree(self, y):
        (sse_np, obj_np), (sse_loop, obj_loop) = KERNELS["numpy"], KERNELS["loop"]
        np.testing.assert_allclose(obj_np(y), obj_loop(y), atol=1e-12)
        assert sse_np(y, 0, len(y) - 1) == pytest.approx(sse_loop(y, 0, len(y) - 1), abs=1e-12)


class TestFilter:
    def test_prompt_contains_candidates(self):
        prompt = render_filter_prompt('plot {x} "quoted"', [rec(0), rec(1)])
        assert 'USER QUERY: plot {x} "quoted"' in prompt
        payload = prompt.split("CANDIDATES (JSON): ", 1)[1].split("\n", 1)[0]
        assert [c["query"] for c in json.loads(payload)] == ["query number 0", "query number 1"]
        assert prompt.endswith("Example: [0, 2, 5]")

    @pytest.mark.parametrize("text,expected", [
        ("[0, 2, 5]", {0, 2}),
        ("Keep these: [3, 3, 1] thanks", {1, 3}),
        ("[a, b] then [1, 9]", {1}),
    ])
    def test_parse(self, text, expected):
        assert parse_filter_output(text, 4) == expected

    @pytest.mark.parametrize("text", ["none", "[7, 8]", "{0: 1}", "[]\n[0]"])
    def test_parse_failure(self, text):
        with pytest.raises(ParseFailure):
            parse_filter_output(text, 4)


class TestArchive:
    def test_round_trip(self):
        recs = [rec(0), rec(1, tool="get_voltages")]
        assert parse_archive(dump_archive(recs)) == recs

    def test_errors_carry_line(self):
        text = dump_archive([rec(0)]) + '{"id": "x", "query": "q", "workflow": []}\n' + dump_archive([rec(0)])
        with pytest.raises(ArchiveError) as err:
            parse_archive(text, "arch.jsonl")
        msg = str(err.value)
        assert "arch.jsonl:2: exemplar 'x': empty workflow" in msg
        assert "arch.jsonl:3: duplicate id 'r0'" in msg

    def test_shipped_archive(self, archive):
        assert len(archive) == 50

    def test_cache(self, tmp_path):
        emb = MockEmbedder()
        cache = EmbeddingCache(emb.identity)
        first = embed_texts(["a", "b"], emb, cache)
        assert len(emb.events) == 2
        again = embed_texts(["b", "a"], emb, cache, workers=2)
        assert len(emb.events) == 2
        np.testing.assert_array_equal(first[0], again[1])
        cache.save(tmp_path / "c.json")
        assert len(EmbeddingCache.load(tmp_path / "c.json", emb.identity)) == 2
        assert len(EmbeddingCache.load(tmp_path / "c.json", "other")) == 0
        with pytest.raises(ArchiveError):
            embed_texts(["a"], MockEmbedder(seed=1), cache)


class TestRetrievalMode:
    @pytest.mark.parametrize("text", ["adaptive", "none", "topk:3", " TOPK:10 "])
    def test_round_trip(self, text):
        assert str(RetrievalMode.parse(text)) == text.strip().lower()

    @pytest.mark.parametrize("text", ["topk:0", "topk:x", "fixed"])
    def test_reject(self, text):
        with pytest.raises(ValueError):
            RetrievalMode.parse(text)


class _Filter:
    def __init__(self, text):
        self.text = text
        self.calls = 0

    def chat_complete(self, request):
        self.calls += 1
        return ChatResponse(text=self.text, usage=TokenUsage(10, 2))


class TestSelect:
    def test_planted(self, archive, planted_overrides):
        from gridflow.fixtures import PLANTED_QUERY

        emb = MockEmbedder(overrides=planted_overrides)
        flt = _Filter("[0, 2, 4]")
        sel = select_exemplars(PLANTED_QUERY, archive, emb, flt)
        assert flt.calls == 1
        assert [r.id for r in sel.records] == ["hc-01", "hc-03", "hc-05"]
        assert sel.usage == TokenUsage(10, 2)

    def test_filter_fallback(self, archive, planted_overrides, caplog):
        from gridflow.fixtures import PLANTED_QUERY

        emb = MockEmbedder(overrides=planted_overrides)
        sel = select_exemplars(PLANTED_QUERY, archive, emb, _Filter("sorry, no idea"))
        assert sel.filter_fallback and sel.records == sel.candidates
        assert "keeping all" in caplog.text

    def test_degenerate_keeps_all(self):
        recs = [rec(i) for i in range(3)]
        sel = select_exemplars("q", recs, MockEmbedder(), KeepAllFilter())
        assert sel.cutoff == 3 and len(sel.records) == 3

    def test_modes(self, archive):
        emb = MockEmbedder()
        flt = _Filter("[0]")
        assert select_exemplars("q", archive, emb, flt, mode=RetrievalMode("none")).records == []
        sel = select_exemplars("q", archive, emb, flt, mode=RetrievalMode("topk", 4))
        assert len(sel.records) == 4 and flt.calls == 0

    def test_empty_archive(self):
        with pytest.raises(ArchiveError):
            select_exemplars("q", [], MockEmbedder(), KeepAllFilter())
