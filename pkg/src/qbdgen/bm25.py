"""Okapi BM25 over an inverted index, with snapshot save/load.

The index is immutable after build; scoring is read-only. Candidates that
were never indexed can still be scored: their per-document statistics are
computed on the fly while N, document frequencies and the average length
stay frozen at index-build values.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import Document
from .metrics import Ranking, rank_by_score

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

SNAPSHOT_VERSION = 1


class UnknownDocumentError(ValueError):
    """The document is not in the index and no text was supplied for it."""


@dataclass(frozen=True)
class Bm25Params:
    """Term-frequency saturation (k1) and length normalization (b)."""

    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


def tokenize(text: str) -> list[str]:
    """Lowercase Unicode-alphanumeric word segmentation. No stemming, no
    stopword removal, duplicates preserved."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Bm25Index:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    doc_count: int
    doc_frequency: dict[str, int]
    # per-doc term frequencies, derived from postings at build/load time
    _doc_terms: dict[str, dict[str, int]] = field(default_factory=dict, repr=False)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.doc_lengths

    def term_frequencies(self, doc_id: str) -> dict[str, int]:
        if doc_id not in self.doc_lengths:
            raise UnknownDocumentError(f"document {doc_id!r} is not indexed")
        return self._doc_terms.get(doc_id, {})

    def idf(self, term: str) -> float:
        df = self.doc_frequency.get(term, 0)
        return math.log(1 + (self.doc_count - df + 0.5) / (df + 0.5))


def build_index(documents: Iterable[Document]) -> Bm25Index:
    """Index the given documents. Statistics (N, df, avgdl) are frozen at
    this point."""
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    doc_terms: dict[str, dict[str, int]] = {}
    for doc in documents:
        if doc.id in doc_lengths:
            raise ValueError(f"duplicate document id {doc.id!r}")
        tokens = tokenize(doc.text)
        doc_lengths[doc.id] = len(tokens)
        tf = dict(Counter(tokens))
        doc_terms[doc.id] = tf
        for term, count in tf.items():
            postings.setdefault(term, []).append((doc.id, count))
    if not doc_lengths:
        raise ValueError("cannot build an index over an empty corpus")
    doc_frequency = {term: len(plist) for term, plist in postings.items()}
    avg = sum(doc_lengths.values()) / len(doc_lengths)
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        doc_count=len(doc_lengths),
        doc_frequency=doc_frequency,
        _doc_terms=doc_terms,
    )


def _score_terms(
    index: Bm25Index,
    params: Bm25Params,
    query_tokens: list[str],
    tf: Mapping[str, int],
    doc_length: int,
) -> float:
    if index.avg_doc_length == 0:
        return 0.0
    norm = params.k1 * (1 - params.b + params.b * doc_length / index.avg_doc_length)
    score = 0.0
    for term in query_tokens:
        f = tf.get(term, 0)
        if f == 0:
            continue
        score += index.idf(term) * f * (params.k1 + 1) / (f + norm)
    return score


def score(
    index: Bm25Index,
    params: Bm25Params,
    query_text: str,
    doc_id: str,
    doc_text: str | None = None,
) -> float:
    """BM25 score of one document for the query token sequence.

    sum over query tokens t of idf(t) * tf * (k1+1) / (tf + k1 * (1 - b +
    b * |d| / avgdl)), with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
    Terms absent from the document contribute 0. For a doc_id outside the
    index, doc_text must be given; its tf and length are computed on the
    fly against the frozen corpus statistics.
    """
    query_tokens = tokenize(query_text)
    if doc_id in index:
        tf = index.term_frequencies(doc_id)
        doc_length = index.doc_lengths[doc_id]
    elif doc_text is not None:
        tokens = tokenize(doc_text)
        tf = dict(Counter(tokens))
        doc_length = len(tokens)
    else:
        raise UnknownDocumentError(f"document {doc_id!r} is not indexed and no text was given")
    return _score_terms(index, params, query_tokens, tf, doc_length)


def rank_candidates(
    index: Bm25Index,
    params: Bm25Params,
    query_text: str,
    candidate_ids: Iterable[str],
    extra_texts: Mapping[str, str] | None = None,
    query_id: str = "",
) -> Ranking:
    """Rank candidates by BM25 score with competition ranks. Ties break
    lexically by doc_id before rank assignment so exports are reproducible.
    Unindexed candidates need their text in extra_texts."""
    candidate_ids = list(candidate_ids)
    if not candidate_ids:
        raise ValueError("empty candidate list")
    extra_texts = extra_texts or {}
    scores = {
        doc_id: score(index, params, query_text, doc_id, extra_texts.get(doc_id))
        for doc_id in candidate_ids
    }
    return rank_by_score(query_id, scores)


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Dump the index as JSONL: a versioned header, one record per document
    length, one per posting list. Load/store round-trips exactly."""
    with open(path, "w", encoding="utf-8") as fp:
        header = {
            "kind": "bm25-index",
            "version": SNAPSHOT_VERSION,
            "doc_count": index.doc_count,
            "avg_doc_length": index.avg_doc_length,
        }
        fp.write(json.dumps(header, sort_keys=True) + "\n")
        lengths = {"kind": "doc-lengths", "lengths": dict(sorted(index.doc_lengths.items()))}
        fp.write(json.dumps(lengths, sort_keys=True) + "\n")
        for term in sorted(index.postings):
            rec = {"kind": "posting", "term": term, "entries": sorted(index.postings[term])}
            fp.write(json.dumps(rec, sort_keys=True) + "\n")


def load_index(path: str | Path) -> Bm25Index:
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    header = None
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "bm25-index":
                if rec.get("version") != SNAPSHOT_VERSION:
                    raise ValueError(f"{path}:{lineno}: unsupported index version {rec.get('version')}")
                header = rec
            elif kind == "doc-lengths":
                doc_lengths = {d: int(n) for d, n in rec["lengths"].items()}
            elif kind == "posting":
                postings[rec["term"]] = [(d, int(n)) for d, n in rec["entries"]]
            else:
                raise ValueError(f"{path}:{lineno}: unknown record kind {kind!r}")
    if header is None:
        raise ValueError(f"{path}: missing index header")
    doc_terms: dict[str, dict[str, int]] = {d: {} for d in doc_lengths}
    for term, plist in postings.items():
        for doc_id, count in plist:
            doc_terms[doc_id][term] = count
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=float(header["avg_doc_length"]),
        doc_count=int(header["doc_count"]),
        doc_frequency={term: len(plist) for term, plist in postings.items()},
        _doc_terms=doc_terms,
    )
