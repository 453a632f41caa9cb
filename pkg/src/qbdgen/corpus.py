"""Corpus domain types, file ingestion, and the train/test split procedure."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

VALID_GRADES = (0, 1, 2)


class CorpusFormatError(ValueError):
    """A corpus or judgments file is malformed."""


class SplitError(ValueError):
    """The judged pools cannot produce a usable train/test split."""


@dataclass(frozen=True)
class Document:
    """A full-text document. In query-by-document search the same type
    serves as both query and candidate."""

    id: str
    text: str
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be non-empty")


@dataclass(frozen=True)
class GradedJudgment:
    """One graded relevance judgment: how well doc_id matches query_id."""

    query_id: str
    doc_id: str
    grade: int


@dataclass(frozen=True)
class CandidatePool:
    """All judged candidates for one query, as (doc_id, grade) pairs."""

    query_id: str
    candidates: tuple[tuple[str, int], ...]

    def grades(self) -> dict[str, int]:
        return {doc_id: grade for doc_id, grade in self.candidates}


@dataclass
class DatasetSplit:
    """Result of the seeded split: a small train set of (query, candidate)
    pairs and per-query graded test lists, with candidate documents
    guaranteed disjoint between the two sides."""

    train_pairs: list[tuple[str, str]]
    test_lists: dict[str, list[tuple[str, int]]]
    seed: int
    pure_test_queries: set[str]
    per_grade_cap: int = 10
    pure_test_fraction: float = 0.20
    train_pair_budget: int = 100

    def train_queries(self) -> set[str]:
        return {q for q, _ in self.train_pairs}

    def train_docs(self) -> set[str]:
        return {d for _, d in self.train_pairs}


def load_documents(path: str | Path) -> dict[str, Document]:
    """Load a JSONL documents file (one object per line: id, text,
    optional metadata). Raises CorpusFormatError naming the bad line."""
    documents: dict[str, Document] = {}
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise CorpusFormatError(f"{path}:{lineno}: expected object with 'id' and 'text'")
            doc_id = obj["id"]
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusFormatError(f"{path}:{lineno}: 'id' must be a non-empty string")
            if doc_id in documents:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
            metadata = obj.get("metadata") or {}
            if not isinstance(metadata, dict):
                raise CorpusFormatError(f"{path}:{lineno}: 'metadata' must be an object")
            documents[doc_id] = Document(
                id=doc_id,
                text=str(obj["text"]),
                metadata={str(k): str(v) for k, v in metadata.items()},
            )
    return documents


def load_judgments(path: str | Path, grades: tuple[int, ...] = VALID_GRADES) -> list[GradedJudgment]:
    """Load a whitespace-separated qrels file: query_id, run tag (ignored),
    doc_id, grade."""
    judgments: list[GradedJudgment] = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected 4 whitespace-separated columns, got {len(parts)}"
                )
            query_id, _, doc_id, grade_text = parts
            try:
                grade = int(grade_text)
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: grade {grade_text!r} is not an integer") from exc
            if grade not in grades:
                raise CorpusFormatError(f"{path}:{lineno}: grade {grade} outside {set(grades)}")
            if (query_id, doc_id) in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate judgment for ({query_id}, {doc_id})")
            seen.add((query_id, doc_id))
            judgments.append(GradedJudgment(query_id=query_id, doc_id=doc_id, grade=grade))
    return judgments


def load_corpus(
    documents_path: str | Path, judgments_path: str | Path
) -> tuple[dict[str, Document], list[GradedJudgment]]:
    """Load documents and judgments, checking that every judgment references
    loaded documents on both the query and candidate side."""
    documents = load_documents(documents_path)
    judgments = load_judgments(judgments_path)
    for j in judgments:
        if j.query_id not in documents:
            raise CorpusFormatError(f"judgment references unknown query id {j.query_id!r}")
        if j.doc_id not in documents:
            raise CorpusFormatError(f"judgment references unknown doc id {j.doc_id!r}")
    return documents, judgments


def build_pools(judgments: list[GradedJudgment]) -> list[CandidatePool]:
    """Group judgments into one candidate pool per query."""
    by_query: dict[str, list[tuple[str, int]]] = {}
    seen: set[tuple[str, str]] = set()
    for j in judgments:
        key = (j.query_id, j.doc_id)
        if key in seen:
            raise CorpusFormatError(f"duplicate judgment for ({j.query_id}, {j.doc_id})")
        seen.add(key)
        by_query.setdefault(j.query_id, []).append((j.doc_id, j.grade))
    return [
        CandidatePool(query_id=q, candidates=tuple(by_query[q]))
        for q in sorted(by_query)
    ]


def split_dataset(
    pools: list[CandidatePool],
    seed: int,
    per_grade_cap: int = 10,
    pure_test_fraction: float = 0.20,
    train_pair_budget: int = 100,
) -> DatasetSplit:
    """Build a deterministic train/test split from judged pools.

    Steps, each driven by the same seeded generator:
      1. per query, sample up to per_grade_cap candidates per grade;
      2. set aside ceil(pure_test_fraction * n_queries) queries as pure test;
      3. flatten the remaining queries to (query, candidate) pairs, shuffle;
      4. keep the first train_pair_budget pairs;
      5. drop kept pairs whose query has a single candidate in the kept set
         (they move to test);
      6. the surviving pairs are the train set, all other sampled pairs the
         per-query test lists;
      7. remove from the test lists any candidate document that appears in
         a train pair, so the two doc sets are disjoint.
    """
    if not pools:
        raise SplitError("no candidate pools to split")
    if not 0 < pure_test_fraction < 1:
        raise ValueError("pure_test_fraction must be in (0, 1)")

    rng = random.Random(seed)
    pools = sorted(pools, key=lambda p: p.query_id)

    # Step 1: per-grade sampling, uniform without replacement.
    sampled: dict[str, list[tuple[str, int]]] = {}
    for pool in pools:
        by_grade: dict[int, list[tuple[str, int]]] = {}
        for doc_id, grade in sorted(pool.candidates):
            by_grade.setdefault(grade, []).append((doc_id, grade))
        picks: list[tuple[str, int]] = []
        for grade in sorted(by_grade, reverse=True):
            group = by_grade[grade]
            picks.extend(rng.sample(group, min(per_grade_cap, len(group))))
        sampled[pool.query_id] = picks

    # Step 2: pure test queries.
    query_ids = sorted(sampled)
    n_pure = math.ceil(pure_test_fraction * len(query_ids))
    pure_test = set(rng.sample(query_ids, n_pure))

    # Step 3: flatten and shuffle the remaining queries' pairs.
    flat: list[tuple[str, str, int]] = []
    for qid in query_ids:
        if qid in pure_test:
            continue
        flat.extend((qid, doc_id, grade) for doc_id, grade in sampled[qid])
    rng.shuffle(flat)

    # Steps 4-5: take the budget, then push out single-candidate queries.
    selected = flat[:train_pair_budget]
    counts: dict[str, int] = {}
    for qid, _, _ in selected:
        counts[qid] = counts.get(qid, 0) + 1
    train = [(qid, doc_id, grade) for qid, doc_id, grade in selected if counts[qid] >= 2]

    # Step 6: everything sampled but not trained becomes test.
    train_keys = {(qid, doc_id) for qid, doc_id, _ in train}
    test_lists: dict[str, list[tuple[str, int]]] = {}
    for qid in query_ids:
        rest = [(doc_id, grade) for doc_id, grade in sampled[qid] if (qid, doc_id) not in train_keys]
        if rest:
            test_lists[qid] = sorted(rest, key=lambda e: (-e[1], e[0]))

    # Step 7: enforce candidate-document disjointness.
    train_docs = {doc_id for _, doc_id, _ in train}
    removed = 0
    for qid in list(test_lists):
        kept = [(doc_id, grade) for doc_id, grade in test_lists[qid] if doc_id not in train_docs]
        removed += len(test_lists[qid]) - len(kept)
        if kept:
            test_lists[qid] = kept
        else:
            del test_lists[qid]
    if removed:
        logger.info("split: removed %d test pairs whose documents appear in the train set", removed)

    train_pairs = sorted((qid, doc_id) for qid, doc_id, _ in train)
    if not train_pairs:
        raise SplitError("not enough pairs to form any training pair")

    return DatasetSplit(
        train_pairs=train_pairs,
        test_lists=test_lists,
        seed=seed,
        pure_test_queries=pure_test,
        per_grade_cap=per_grade_cap,
        pure_test_fraction=pure_test_fraction,
        train_pair_budget=train_pair_budget,
    )


def save_split(split: DatasetSplit, path: str | Path) -> None:
    """Write a split as JSONL: a header record with the seed and parameters,
    then one record per train pair and per test list. Output is byte-stable
    for identical splits."""
    with open(path, "w", encoding="utf-8") as fp:
        header = {
            "kind": "split-header",
            "version": 1,
            "seed": split.seed,
            "per_grade_cap": split.per_grade_cap,
            "pure_test_fraction": split.pure_test_fraction,
            "train_pair_budget": split.train_pair_budget,
            "pure_test_queries": sorted(split.pure_test_queries),
        }
        fp.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for qid, doc_id in split.train_pairs:
            rec = {"kind": "train-pair", "query_id": qid, "doc_id": doc_id}
            fp.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
        for qid in sorted(split.test_lists):
            rec = {
                "kind": "test-list",
                "query_id": qid,
                "candidates": [[d, g] for d, g in split.test_lists[qid]],
            }
            fp.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def load_split(path: str | Path) -> DatasetSplit:
    """Read a split produced by save_split."""
    train_pairs: list[tuple[str, str]] = []
    test_lists: dict[str, list[tuple[str, int]]] = {}
    header = None
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            kind = rec.get("kind")
            if kind == "split-header":
                if rec.get("version") != 1:
                    raise CorpusFormatError(f"{path}:{lineno}: unsupported split version {rec.get('version')}")
                header = rec
            elif kind == "train-pair":
                train_pairs.append((rec["query_id"], rec["doc_id"]))
            elif kind == "test-list":
                test_lists[rec["query_id"]] = [(d, int(g)) for d, g in rec["candidates"]]
            else:
                raise CorpusFormatError(f"{path}:{lineno}: unknown record kind {kind!r}")
    if header is None:
        raise CorpusFormatError(f"{path}: missing split-header record")
    return DatasetSplit(
        train_pairs=train_pairs,
        test_lists=test_lists,
        seed=int(header["seed"]),
        pure_test_queries=set(header["pure_test_queries"]),
        per_grade_cap=int(header["per_grade_cap"]),
        pure_test_fraction=float(header["pure_test_fraction"]),
        train_pair_budget=int(header["train_pair_budget"]),
    )
