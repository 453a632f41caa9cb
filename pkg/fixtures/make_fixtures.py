"""Regenerate the bundled demo fixtures.

Builds a small synthetic corpus (12 queries, 6 graded candidates each),
its qrels, and stub response files for the pairwise and pointwise LLM
methods. The stub replies replay the ground truth, so the whole CLI
workflow runs offline. Run from the repository root:

    python fixtures/make_fixtures.py
"""

import json
from pathlib import Path

from qbdgen.rerank import PromptTemplates, render_pcs_prompt, render_scs_prompt
from qbdgen.gateway import prompt_sha256

OUT = Path(__file__).parent

N_QUERIES = 12
# (grade, topic term occurrences, total token length)
SHAPES = [(2, 1, 10), (2, 1, 10), (1, 1, 18), (1, 1, 18), (0, 2, 24), (0, 2, 24)]


def build_corpus():
    documents = {}
    pools = []
    for qi in range(N_QUERIES):
        topic = f"theme{qi:02d}"
        query_id = f"query{qi:02d}"
        documents[query_id] = f"{topic} overview request"
        candidates = []
        for ci, (grade, count, length) in enumerate(SHAPES):
            doc_id = f"doc{qi:02d}{chr(ord('a') + ci)}"
            words = [topic] * count
            words += [f"filler{doc_id}n{i}" for i in range(length - count)]
            documents[doc_id] = " ".join(words)
            candidates.append((doc_id, grade))
        pools.append((query_id, candidates))
    return documents, pools


def main():
    documents, pools = build_corpus()

    with open(OUT / "docs.jsonl", "w") as fp:
        for doc_id in sorted(documents):
            fp.write(json.dumps({"id": doc_id, "text": documents[doc_id]}) + "\n")

    with open(OUT / "qrels.txt", "w") as fp:
        for query_id, candidates in pools:
            for doc_id, grade in candidates:
                fp.write(f"{query_id} 0 {doc_id} {grade}\n")

    templates = PromptTemplates.default()
    pcs_lines = []
    scs_lines = []
    for query_id, candidates in pools:
        query_text = documents[query_id]
        grades = dict(candidates)
        for doc_id, grade in candidates:
            prompt = render_scs_prompt(templates, query_text, documents[doc_id], None)
            response = json.dumps(
                {"score": grade - 1, "explanation": f"graded {grade} for {query_id}"}
            )
            scs_lines.append({"prompt_sha256": prompt_sha256(prompt), "response": response})
        for a, ga in candidates:
            for b, gb in candidates:
                if a == b:
                    continue
                prompt = render_pcs_prompt(
                    templates, query_text, documents[a], documents[b], None
                )
                verdict = (ga > gb) - (ga < gb)
                response = json.dumps(
                    {"verdict": verdict, "explanation": f"{a} grade {ga} vs {b} grade {gb}"}
                )
                pcs_lines.append({"prompt_sha256": prompt_sha256(prompt), "response": response})

    with open(OUT / "stub_pcs.jsonl", "w") as fp:
        for line in pcs_lines:
            fp.write(json.dumps(line) + "\n")
    with open(OUT / "stub_scs.jsonl", "w") as fp:
        for line in scs_lines:
            fp.write(json.dumps(line) + "\n")

    print(f"wrote {len(documents)} documents, {sum(len(c) for _, c in pools)} judgments, "
          f"{len(pcs_lines)} pairwise and {len(scs_lines)} pointwise stub replies")


if __name__ == "__main__":
    main()
