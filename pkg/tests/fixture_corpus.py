"""Synthetic corpora shared across tests.

The length-skew corpus is built so the BM25 objective has a known shape:
each query's two best candidates (grade 2) are short documents with the
topic term once, the grade-1 pair is longer with the same single
occurrence, and the grade-0 pair is longest but carries the topic term
twice. Below b ~ 0.81 the long high-tf documents outscore everything;
above it the short relevant documents win, so the default {1.5, 0.75} is
strictly suboptimal and any b >= 0.9 grid point is optimal.
"""

import re

from qbdgen.corpus import CandidatePool, Document, GradedJudgment

DOC_ID_RE = re.compile(r"\[doc:([a-z0-9_]+)\]")


def _doc(doc_id: str, topic: str, topic_count: int, length: int) -> Document:
    # The [doc:...] marker lets ground-truth stub handlers recover which
    # candidates a prompt contains; it tokenizes to "doc" + the id, and
    # those two tokens count toward the document's total length.
    body = [f"[doc:{doc_id}]"] + [topic] * topic_count
    filler_needed = length - topic_count - 2
    body += [f"fill{doc_id}x{i}" for i in range(filler_needed)]
    return Document(id=doc_id, text=" ".join(body))


def length_skew_corpus(n_queries: int = 20, id_prefix: str = ""):
    """Build (documents, pools, grades) for n queries with 6 graded
    candidates each: grades (2, 2, 1, 1, 0, 0)."""
    documents: dict[str, Document] = {}
    pools: list[CandidatePool] = []
    grades: dict[str, dict[str, int]] = {}
    shapes = [(2, 1, 10), (2, 1, 10), (1, 1, 18), (1, 1, 18), (0, 2, 24), (0, 2, 24)]
    for qi in range(n_queries):
        topic = f"topic{id_prefix}{qi:02d}"
        query_id = f"q{id_prefix}{qi:02d}"
        documents[query_id] = Document(id=query_id, text=topic)
        candidates = []
        for ci, (grade, topic_count, length) in enumerate(shapes):
            doc_id = f"d{id_prefix}{qi:02d}c{ci}"
            documents[doc_id] = _doc(doc_id, topic, topic_count, length)
            candidates.append((doc_id, grade))
        pools.append(CandidatePool(query_id=query_id, candidates=tuple(candidates)))
        grades[query_id] = dict(candidates)
    return documents, pools, grades


def judgments_from_pools(pools) -> list[GradedJudgment]:
    return [
        GradedJudgment(query_id=p.query_id, doc_id=d, grade=g)
        for p in pools
        for d, g in p.candidates
    ]


def truth_verdict_handler(grades: dict[str, dict[str, int]]):
    """A stub completion handler that replays the ground truth: it reads
    the [doc:...] markers out of a pairwise prompt and compares grades."""

    def handler(prompt: str) -> str:
        ids = DOC_ID_RE.findall(prompt)
        if len(ids) < 2:
            raise AssertionError(f"expected two candidate markers in prompt, found {ids}")
        first, second = ids[0], ids[1]
        query = _query_of(grades, first)
        ga, gb = grades[query][first], grades[query][second]
        verdict = (ga > gb) - (ga < gb)
        return f'{{"verdict": {verdict}, "explanation": "grade {ga} vs {gb}"}}'

    return handler


def truth_score_handler(grades: dict[str, dict[str, int]]):
    """A stub completion handler for pointwise prompts: score = grade - 1,
    mapping grades {0, 1, 2} onto [-1, 1]."""

    def handler(prompt: str) -> str:
        ids = DOC_ID_RE.findall(prompt)
        doc_id = ids[0]
        query = _query_of(grades, doc_id)
        score = grades[query][doc_id] - 1
        return f'{{"score": {score}, "explanation": "grade {grades[query][doc_id]}"}}'

    return handler


def _query_of(grades, doc_id: str) -> str:
    for query, docs in grades.items():
        if doc_id in docs:
            return query
    raise KeyError(doc_id)
