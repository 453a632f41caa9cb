import math

import pytest

from qbdgen.bm25 import (
    Bm25Params,
    UnknownDocumentError,
    build_index,
    load_index,
    rank_candidates,
    save_index,
    score,
    tokenize,
)
from qbdgen.corpus import Document


class TestParams:
    def test_defaults(self):
        params = Bm25Params()
        assert params.k1 == 1.5
        assert params.b == 0.75

    @pytest.mark.parametrize("k1,b", [(0.0, 0.5), (-1.0, 0.5), (1.5, -0.1), (1.5, 1.1)])
    def test_invalid(self, k1, b):
        with pytest.raises(ValueError):
            Bm25Params(k1=k1, b=b)


class TestTokenize:
    def test_punctuation_and_hyphens(self):
        assert tokenize("Heart failure, NYHA-II") == ["heart", "failure", "nyha", "ii"]

    def test_empty(self):
        assert tokenize("") == []

    def test_duplicates_preserved(self):
        assert tokenize("BM25 BM25") == ["bm25", "bm25"]

    def test_underscore_splits(self):
        assert tokenize("foo_bar") == ["foo", "bar"]


def docs(*texts):
    return [Document(id=f"d{i}", text=t) for i, t in enumerate(texts)]


class TestIndex:
    def test_statistics(self):
        index = build_index(docs("a b c", "a b c d e"))
        assert index.doc_count == 2
        assert index.avg_doc_length == 4.0
        assert index.doc_frequency["a"] == 2
        assert index.doc_frequency["d"] == 1
        assert index.doc_lengths == {"d0": 3, "d1": 5}

    def test_rebuild_identical(self):
        d = docs("x y", "y z z")
        a, b = build_index(d), build_index(d)
        assert a.postings == b.postings
        assert a.doc_frequency == b.doc_frequency
        assert a.avg_doc_length == b.avg_doc_length

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_index([])

    def test_snapshot_round_trip(self, tmp_path):
        index = build_index(docs("alpha beta beta", "beta gamma", "alpha alpha delta"))
        path = tmp_path / "index.jsonl"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.postings == index.postings
        assert loaded.doc_lengths == index.doc_lengths
        assert loaded.avg_doc_length == index.avg_doc_length
        assert loaded.doc_count == index.doc_count
        assert loaded.doc_frequency == index.doc_frequency
        params = Bm25Params()
        for doc_id in index.doc_lengths:
            assert score(loaded, params, "alpha beta", doc_id) == score(
                index, params, "alpha beta", doc_id
            )


class TestScore:
    def test_disjoint_query_scores_zero(self):
        index = build_index(docs("a b", "c d"))
        assert score(index, Bm25Params(), "zzz yyy", "d0") == 0.0

    def test_hand_computed_value(self):
        # One doc with the term twice among 4 tokens, one without; N=2,
        # df=1, avgdl=4. Independent calculation:
        # ln(1 + 1.5/1.5) * (2 * 2.5) / (2 + 1.5) = 0.990210257942779
        index = build_index(docs("term term pad1 pad2", "pad3 pad4 pad5 pad6"))
        got = score(index, Bm25Params(), "term", "d0")
        expected = math.log(1 + (2 - 1 + 0.5) / (1 + 0.5)) * (2 * 2.5) / (2 + 1.5)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.990210257942779, abs=1e-12)

    def test_b_zero_ignores_length(self):
        index = build_index(docs("t a", "t a b c d e f g"))
        params = Bm25Params(k1=1.5, b=0.0)
        assert score(index, params, "t", "d0") == pytest.approx(
            score(index, params, "t", "d1"), abs=1e-15
        )

    def test_b_one_penalizes_length(self):
        index = build_index(docs("t a", "t a b c d e f g"))
        params = Bm25Params(k1=1.5, b=1.0)
        assert score(index, params, "t", "d0") > score(index, params, "t", "d1")

    def test_monotone_in_tf(self):
        index = build_index(docs("t a a a", "t t a a", "t t t a"))
        params = Bm25Params()
        scores = [score(index, params, "t", f"d{i}") for i in range(3)]
        assert scores == sorted(scores)
        assert all(s >= 0 for s in scores)

    def test_unknown_doc_without_text(self):
        index = build_index(docs("a b"))
        with pytest.raises(UnknownDocumentError):
            score(index, Bm25Params(), "a", "missing")

    def test_on_the_fly_scoring_uses_frozen_stats(self):
        index = build_index(docs("t a", "b c"))
        # A new doc identical in shape to d0 scores identically.
        external = score(index, Bm25Params(), "t", "ext", doc_text="t a")
        assert external == pytest.approx(score(index, Bm25Params(), "t", "d0"), abs=1e-15)


class TestRankCandidates:
    def test_single_candidate(self):
        index = build_index(docs("a b", "c d"))
        ranking = rank_candidates(index, Bm25Params(), "a", ["d0"], query_id="q")
        assert [(e.doc_id, e.rank) for e in ranking.entries] == [("d0", 1)]

    def test_equal_scores_tie(self):
        index = build_index(docs("t a", "t a", "x y"))
        ranking = rank_candidates(index, Bm25Params(), "t", ["d0", "d1"])
        assert [e.rank for e in ranking.entries] == [1, 1]
        assert ranking.doc_ids() == ["d0", "d1"]  # lexical tie-break

    def test_best_overlap_ranks_first(self):
        index = build_index(docs("apple banana cherry", "apple pear", "kiwi melon"))
        ranking = rank_candidates(
            index, Bm25Params(), "apple banana cherry", ["d0", "d1", "d2"]
        )
        assert ranking.doc_ids()[0] == "d0"
        # verify the order agrees with direct scoring
        direct = {
            d: score(index, Bm25Params(), "apple banana cherry", d)
            for d in ("d0", "d1", "d2")
        }
        assert ranking.doc_ids() == sorted(direct, key=lambda d: (-direct[d], d))

    def test_empty_candidates_rejected(self):
        index = build_index(docs("a"))
        with pytest.raises(ValueError):
            rank_candidates(index, Bm25Params(), "a", [])
