import random

import pytest

from qbdgen.corpus import Document
from qbdgen.gateway import Gateway, GatewayConfig, StubBackend, prompt_sha256
from qbdgen.metrics import rank_by_score
from qbdgen.rerank import (
    PairVerdict,
    PromptTemplates,
    RerankFailure,
    RerankMethod,
    aggregate_pair_verdicts,
    parse_score_response,
    parse_verdict_response,
    pcs_llm,
    render_pcs_prompt,
    render_scs_prompt,
    rerank,
    scs_embed,
    scs_llm,
)

from oracles import pcs_totals_oracle

FAST = GatewayConfig(backoff_base=0.0)


def gw(**stub_kwargs):
    return Gateway(FAST, StubBackend(**stub_kwargs))


def doc(doc_id, text=None):
    return Document(id=doc_id, text=text if text is not None else f"body of {doc_id}")


class TestMethod:
    def test_labels(self):
        assert RerankMethod("scs_llm").label == "scs_llm"
        assert RerankMethod("scs_llm", instructions="match on diagnosis").label == "scs_instr"
        assert RerankMethod("pcs_llm", instructions="x").label == "pcs_instr"

    def test_blank_instructions_rejected(self):
        with pytest.raises(ValueError):
            RerankMethod("scs_llm", instructions="   ")

    def test_embedding_method_takes_no_instructions(self):
        with pytest.raises(ValueError):
            RerankMethod("scs_emb", instructions="x")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            RerankMethod("listwise")


class TestParsing:
    def test_strict_json_score(self):
        assert parse_score_response('{"score": 0.8, "explanation": "close match"}') == (
            0.8,
            "close match",
        )

    def test_json_embedded_in_prose(self):
        text = 'Sure! Here is my answer: {"score": -0.5, "explanation": "poor"} hope it helps'
        assert parse_score_response(text) == (-0.5, "poor")

    def test_fallback_number(self):
        value, explanation = parse_score_response("Score: -0.25 because the topics differ")
        assert value == -0.25
        assert explanation is None

    def test_out_of_range_clamped(self):
        value, _ = parse_score_response('{"score": 3.5, "explanation": "x"}')
        assert value == 1.0

    def test_unparseable(self):
        with pytest.raises(ValueError):
            parse_score_response("maybe")

    def test_verdict_json(self):
        assert parse_verdict_response('{"verdict": -1, "explanation": "b wins"}') == (-1, "b wins")

    def test_verdict_score_key(self):
        assert parse_verdict_response('{"score": 1}') == (1, None)

    def test_verdict_fallback(self):
        assert parse_verdict_response("I pick 0, they tie")[0] == 0

    def test_out_of_set_number_fails(self):
        with pytest.raises(ValueError):
            parse_verdict_response("2")


class TestPromptRendering:
    def test_instr_variant_differs_only_by_instructions_block(self):
        templates = PromptTemplates.default()
        bare = render_scs_prompt(templates, "Q", "C", None)
        with_instr = render_scs_prompt(templates, "Q", "C", "match on symptoms")
        assert with_instr.replace("Matching instructions:\nmatch on symptoms\n\n", "") == bare
        bare_pair = render_pcs_prompt(templates, "Q", "A", "B", None)
        with_pair = render_pcs_prompt(templates, "Q", "A", "B", "match on symptoms")
        assert with_pair.replace("Matching instructions:\nmatch on symptoms\n\n", "") == bare_pair

    def test_placeholders_filled(self):
        templates = PromptTemplates(scs="{{query}}|{{candidate}}|{{instructions}}",
                                    pcs="{{query}}|{{candidate_a}}|{{candidate_b}}|{{instructions}}")
        assert render_scs_prompt(templates, "q", "c", None) == "q|c|"
        assert render_pcs_prompt(templates, "q", "a", "b", None) == "q|a|b|"

    def test_load_from_directory(self, tmp_path):
        (tmp_path / "scs.txt").write_text("S {{query}} {{candidate}} {{instructions}}")
        (tmp_path / "pcs.txt").write_text("P {{query}} {{candidate_a}} {{candidate_b}} {{instructions}}")
        templates = PromptTemplates.load(tmp_path)
        assert templates.scs.startswith("S ")


class TestScsEmbed:
    def test_identical_text_scores_one(self):
        query = doc("q", "same text")
        candidate = doc("c", "same text")
        scores = scs_embed(query, [candidate], gw(seed=3))
        assert scores[0].score == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_vectors_score_zero(self):
        gateway = gw(embeddings={"qt": [1.0, 0.0], "ct": [0.0, 1.0]})
        scores = scs_embed(doc("q", "qt"), [doc("c", "ct")], gateway)
        assert scores[0].score == 0.0

    def test_hand_computed_cosines(self):
        gateway = gw(embeddings={"qt": [1.0, 0.0], "a": [1.0, 0.0], "b": [0.0, 1.0], "c": [3.0, 4.0]})
        scores = scs_embed(doc("q", "qt"), [doc("a", "a"), doc("b", "b"), doc("c", "c")], gateway)
        by_id = {s.doc_id: s.score for s in scores}
        assert by_id["a"] == pytest.approx(1.0, abs=1e-12)
        assert by_id["b"] == 0.0
        assert by_id["c"] == pytest.approx(3 / 5, abs=1e-12)

    def test_gateway_error_names_doc(self):
        def boom(text):
            if text == "bad":
                raise RuntimeError("backend down")
            return [1.0, 0.0]

        gateway = gw(embed_handler=boom)
        with pytest.raises(Exception, match="cbad"):
            scs_embed(doc("q", "fine"), [doc("cgood", "fine"), doc("cbad", "bad")], gateway)


class TestScsLlm:
    def test_scores_and_explanations(self):
        templates = PromptTemplates.default()
        method = RerankMethod("scs_llm")
        query = doc("q")
        cands = [doc("c1"), doc("c2")]
        responses = {}
        for cand, reply in zip(cands, ['{"score": 0.8, "explanation": "good"}', "Score: -0.25 because off"]):
            prompt = render_scs_prompt(templates, query.text, cand.text, None)
            responses[prompt_sha256(prompt)] = reply
        scores, failures = scs_llm(query, cands, method, gw(responses=responses), templates)
        assert failures == []
        by_id = {s.doc_id: s for s in scores}
        assert by_id["c1"].score == 0.8
        assert by_id["c1"].explanation == "good"
        assert by_id["c2"].score == -0.25

    def test_parse_failure_recorded(self):
        gateway = gw(handler=lambda p: "maybe")
        scores, failures = scs_llm(doc("q"), [doc("c1")], RerankMethod("scs_llm"), gateway)
        assert scores == []
        assert failures[0][0] == "c1"


def graded_stub(order):
    """Verdict handler consistent with a strict candidate order: earlier beats later."""
    strength = {d: -i for i, d in enumerate(order)}

    def handler(prompt):
        # prompts contain "first:<id>" and "second:<id>" markers from _pair_docs
        first = prompt.split("first:")[1].split()[0]
        second = prompt.split("second:")[1].split()[0]
        v = (strength[first] > strength[second]) - (strength[first] < strength[second])
        return f'{{"verdict": {v}, "explanation": "{first} vs {second}"}}'

    return handler


def _pair_docs(ids):
    return [doc(i, f"first:{i} second:{i} text") for i in ids]


class TestPcsLlm:
    def _run(self, ids, handler):
        docs = [doc(i, f"first:{i} second:{i}") for i in ids]
        templates = PromptTemplates(
            scs="{{query}}|{{candidate}}|{{instructions}}",
            pcs="q first:{{candidate_a}} second:{{candidate_b}} {{instructions}}",
        )
        # candidate text carries its id only, so the handler can read both slots
        docs = [doc(i, i) for i in ids]
        gateway = gw(handler=handler)
        return pcs_llm(doc("q", "query"), docs, RerankMethod("pcs_llm"), gateway, templates)

    def test_all_ordered_pairs_submitted(self):
        verdicts = self._run(["a", "b", "c"], graded_stub(["a", "b", "c"]))
        assert len(verdicts) == 6
        pairs = {(v.doc_first, v.doc_second) for v in verdicts}
        assert len(pairs) == 6

    def test_antisymmetric_under_order_swap(self):
        verdicts = self._run(["a", "b", "c"], graded_stub(["a", "b", "c"]))
        by_pair = {(v.doc_first, v.doc_second): v.verdict for v in verdicts}
        for (first, second), v in by_pair.items():
            assert by_pair[(second, first)] == -v

    def test_unparseable_becomes_flagged_neutral(self):
        verdicts = self._run(["a", "b"], lambda p: "2")
        assert all(v.verdict == 0 and v.parse_failed for v in verdicts)

    def test_needs_two_candidates(self):
        with pytest.raises(ValueError):
            pcs_llm(doc("q"), [doc("a")], RerankMethod("pcs_llm"), gw(handler=lambda p: "0"))


class TestAggregation:
    def consistent_verdicts(self, order):
        verdicts = []
        strength = {d: -i for i, d in enumerate(order)}
        for a in order:
            for b in order:
                if a != b:
                    v = (strength[a] > strength[b]) - (strength[a] < strength[b])
                    verdicts.append(PairVerdict(doc_first=a, doc_second=b, verdict=v))
        return verdicts

    def test_consistent_abc_totals(self):
        verdicts = self.consistent_verdicts(["A", "B", "C"])
        totals = aggregate_pair_verdicts(verdicts, ["A", "B", "C"])
        assert totals == {"A": 4, "B": 0, "C": -4}
        ranking = rank_by_score("q", {d: float(t) for d, t in totals.items()})
        assert ranking.doc_ids() == ["A", "B", "C"]
        assert [e.rank for e in ranking.entries] == [1, 2, 3]

    def test_matches_independent_oracle(self):
        verdicts = self.consistent_verdicts(["A", "B", "C"])
        expected = pcs_totals_oracle([(v.doc_first, v.doc_second, v.verdict) for v in verdicts])
        assert aggregate_pair_verdicts(verdicts) == expected

    def test_permutation_invariance(self):
        verdicts = self.consistent_verdicts(["A", "B", "C", "D"])
        baseline = aggregate_pair_verdicts(verdicts)
        rng = random.Random(0)
        for _ in range(10):
            shuffled = verdicts[:]
            rng.shuffle(shuffled)
            assert aggregate_pair_verdicts(shuffled) == baseline

    def test_all_neutral_all_tied(self):
        verdicts = [
            PairVerdict(doc_first=a, doc_second=b, verdict=0)
            for a in "AB"
            for b in "AB"
            if a != b
        ]
        totals = aggregate_pair_verdicts(verdicts, ["A", "B"])
        assert totals == {"A": 0, "B": 0}
        ranking = rank_by_score("q", {d: float(t) for d, t in totals.items()})
        assert [e.rank for e in ranking.entries] == [1, 1]

    def test_single_verdict(self):
        totals = aggregate_pair_verdicts([PairVerdict("A", "B", 1)])
        assert totals == {"A": 1, "B": -1}

    def test_unknown_candidate_rejected(self):
        with pytest.raises(ValueError):
            aggregate_pair_verdicts([PairVerdict("A", "X", 1)], ["A", "B"])

    def test_transitive_oracle_gives_its_total_order(self):
        order = ["d3", "d0", "d2", "d1", "d4"]
        verdicts = self.consistent_verdicts(order)
        totals = aggregate_pair_verdicts(verdicts, order)
        ranking = rank_by_score("q", {d: float(t) for d, t in totals.items()})
        assert ranking.doc_ids() == order
        assert [e.rank for e in ranking.entries] == [1, 2, 3, 4, 5]


class TestRerankDispatch:
    def _templates(self):
        return PromptTemplates(
            scs="score {{candidate}} for {{query}} {{instructions}}",
            pcs="q={{query}} first:{{candidate_a}} second:{{candidate_b}} {{instructions}}",
        )

    def test_truth_replaying_stub_gives_perfect_tau(self):
        from qbdgen.metrics import kendall_tau_b

        docs = [doc(i, i) for i in ("a", "b", "c")]
        result = rerank(
            doc("q", "query"), docs, RerankMethod("pcs_llm"),
            gw(handler=graded_stub(["a", "b", "c"])), self._templates(),
        )
        truth_ranks = [1, 2, 3]
        pred_ranks = [result.ranking.rank_of(d) for d in ("a", "b", "c")]
        assert kendall_tau_b(pred_ranks, truth_ranks) == 1.0
        assert len(result.pair_verdicts) == 6

    def test_inverted_stub_gives_negative_tau(self):
        from qbdgen.metrics import kendall_tau_b

        docs = [doc(i, i) for i in ("a", "b", "c")]
        result = rerank(
            doc("q", "query"), docs, RerankMethod("pcs_llm"),
            gw(handler=graded_stub(["c", "b", "a"])), self._templates(),
        )
        pred_ranks = [result.ranking.rank_of(d) for d in ("a", "b", "c")]
        assert kendall_tau_b(pred_ranks, [1, 2, 3]) == -1.0

    def test_mixed_verdicts_match_reaggregation(self):
        def handler(prompt):
            first = prompt.split("first:")[1].split()[0]
            second = prompt.split("second:")[1].split()[0]
            if {first, second} == {"a", "b"}:
                return '{"verdict": 0}'
            order = {"a": 2, "b": 1, "c": 0}
            v = (order[first] > order[second]) - (order[first] < order[second])
            return f'{{"verdict": {v}}}'

        docs = [doc(i, i) for i in ("a", "b", "c")]
        result = rerank(doc("q", "query"), docs, RerankMethod("pcs_llm"),
                        gw(handler=handler), self._templates())
        expected_totals = pcs_totals_oracle(
            [(v.doc_first, v.doc_second, v.verdict) for v in result.pair_verdicts]
        )
        rebuilt = rank_by_score("q", {d: float(t) for d, t in expected_totals.items()})
        assert result.ranking == rebuilt

    def test_ranking_round_trips_from_stored_scores(self):
        docs = [doc(i, i) for i in ("a", "b", "c", "d")]
        result = rerank(doc("q", "query"), docs, RerankMethod("pcs_llm"),
                        gw(handler=graded_stub(["b", "d", "a", "c"])), self._templates())
        rebuilt = rank_by_score("q", {s.doc_id: s.score for s in result.candidate_scores})
        assert rebuilt == result.ranking

    def test_all_unscorable_fails(self):
        gateway = gw(handler=lambda p: "no numbers here")
        with pytest.raises(RerankFailure):
            rerank(doc("q", "query"), [doc("a", "a")], RerankMethod("scs_llm"),
                   gateway, self._templates())
