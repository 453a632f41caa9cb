"""The reranking methods: embedding similarity, single-candidate LLM
scoring, and all-pairs pairwise LLM scoring, each with an optional
instructions block from the reviewing expert.

Pairwise runs submit every ordered pair (both presentation orders), and a
candidate's total is the sum over every comparison it took part in: for an
ordered verdict (a, b, v) the total of a moves by +v and the total of b
by -v, so order-swapped consistent verdicts reinforce each other.
"""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document
from .gateway import Gateway
from .metrics import Ranking, rank_by_score

logger = logging.getLogger(__name__)

KINDS = ("scs_emb", "scs_llm", "pcs_llm")

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


class RerankFailure(RuntimeError):
    """No candidate could be scored for this query."""


class EmbeddingError(RuntimeError):
    def __init__(self, doc_id: str, cause: Exception):
        super().__init__(f"embedding failed for doc {doc_id!r}: {cause}")
        self.doc_id = doc_id


@dataclass(frozen=True)
class RerankMethod:
    """One of the reranking strategies. Attaching instructions turns the
    LLM methods into their *_instr variants; only the prompt changes."""

    kind: str
    instructions: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}, expected one of {KINDS}")
        if self.instructions is not None and not self.instructions.strip():
            raise ValueError("instructions, when present, must be non-empty")
        if self.kind == "scs_emb" and self.instructions is not None:
            raise ValueError("the embedding method takes no instructions")

    @property
    def is_pairwise(self) -> bool:
        return self.kind == "pcs_llm"

    @property
    def label(self) -> str:
        if self.instructions is None:
            return self.kind
        return self.kind.replace("_llm", "_instr")


@dataclass(frozen=True)
class CandidateScore:
    doc_id: str
    score: float
    explanation: str | None = None


@dataclass(frozen=True)
class PairVerdict:
    doc_first: str
    doc_second: str
    verdict: int
    explanation: str | None = None
    parse_failed: bool = False

    def __post_init__(self):
        if self.verdict not in (-1, 0, 1):
            raise ValueError(f"verdict must be -1, 0 or 1, got {self.verdict}")


@dataclass
class RerankResult:
    query_id: str
    method: RerankMethod
    candidate_scores: list[CandidateScore]
    ranking: Ranking
    pair_verdicts: list[PairVerdict] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)  # (doc_id, reason)
    instructions_version: int | None = None


@dataclass(frozen=True)
class PromptTemplates:
    """Externalized prompt text with {{query}}, {{candidate}},
    {{candidate_a}}, {{candidate_b}} and {{instructions}} placeholders."""

    scs: str
    pcs: str

    @classmethod
    def default(cls) -> "PromptTemplates":
        pkg = resources.files("qbdgen.templates")
        return cls(
            scs=(pkg / "scs.txt").read_text(encoding="utf-8"),
            pcs=(pkg / "pcs.txt").read_text(encoding="utf-8"),
        )

    @classmethod
    def load(cls, directory: str | Path) -> "PromptTemplates":
        directory = Path(directory)
        return cls(
            scs=(directory / "scs.txt").read_text(encoding="utf-8"),
            pcs=(directory / "pcs.txt").read_text(encoding="utf-8"),
        )


def _instructions_block(instructions: str | None) -> str:
    if instructions is None:
        return ""
    return f"Matching instructions:\n{instructions}\n\n"


def render_scs_prompt(
    templates: PromptTemplates, query: str, candidate: str, instructions: str | None
) -> str:
    return (
        templates.scs.replace("{{instructions}}", _instructions_block(instructions))
        .replace("{{query}}", query)
        .replace("{{candidate}}", candidate)
    )


def render_pcs_prompt(
    templates: PromptTemplates,
    query: str,
    candidate_a: str,
    candidate_b: str,
    instructions: str | None,
) -> str:
    return (
        templates.pcs.replace("{{instructions}}", _instructions_block(instructions))
        .replace("{{query}}", query)
        .replace("{{candidate_a}}", candidate_a)
        .replace("{{candidate_b}}", candidate_b)
    )


def _find_json_object(text: str) -> dict | None:
    start = text.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    return None


def parse_score_response(text: str) -> tuple[float, str | None]:
    """Parse an LLM reply into (score in [-1, 1], explanation).

    Strict JSON with a `score` key is tried first; the fallback takes the
    first number in [-1, 1] found in the text. Out-of-range JSON scores are
    clamped with a warning. Raises ValueError when nothing parses.
    """
    obj = _find_json_object(text)
    if obj is not None and "score" in obj:
        try:
            value = float(obj["score"])
        except (TypeError, ValueError):
            value = math.nan
        if not math.isnan(value):
            explanation = obj.get("explanation")
            if value < -1 or value > 1:
                logger.warning("score %.3f out of [-1, 1], clamping", value)
                value = max(-1.0, min(1.0, value))
            return value, explanation if isinstance(explanation, str) else None
    for match in _NUMBER_RE.finditer(text):
        value = float(match.group())
        if -1 <= value <= 1:
            return value, None
    raise ValueError(f"no score found in response: {text[:80]!r}")


def parse_verdict_response(text: str) -> tuple[int, str | None]:
    """Parse an LLM reply into (verdict in {-1, 0, 1}, explanation).
    Raises ValueError when nothing parses."""
    obj = _find_json_object(text)
    if obj is not None:
        for key in ("verdict", "score"):
            if key in obj:
                try:
                    value = float(obj[key])
                except (TypeError, ValueError):
                    continue
                if value in (-1.0, 0.0, 1.0):
                    explanation = obj.get("explanation")
                    return int(value), explanation if isinstance(explanation, str) else None
    for match in _NUMBER_RE.finditer(text):
        value = float(match.group())
        if value in (-1.0, 0.0, 1.0):
            return int(value), None
    raise ValueError(f"no verdict found in response: {text[:80]!r}")


def _cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0 or nv == 0:
        raise ValueError("cannot take cosine of a zero vector")
    return dot / (nu * nv)


def _map_concurrently(gateway: Gateway, fn, items: Sequence):
    """Run fn over items preserving input order, fanning out up to the
    gateway's parallelism."""
    workers = min(gateway.config.parallelism, max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def scs_embed(
    query: Document, candidates: Sequence[Document], gateway: Gateway
) -> list[CandidateScore]:
    """Score each candidate by cosine similarity between its embedding and
    the query embedding."""
    if not candidates:
        raise ValueError("no candidates to score")
    query_vec = gateway.embed(query.text)

    def one(candidate: Document) -> CandidateScore:
        try:
            vec = gateway.embed(candidate.text)
            return CandidateScore(doc_id=candidate.id, score=_cosine(query_vec, vec))
        except Exception as exc:
            raise EmbeddingError(candidate.id, exc) from exc

    return _map_concurrently(gateway, one, list(candidates))


def scs_llm(
    query: Document,
    candidates: Sequence[Document],
    method: RerankMethod,
    gateway: Gateway,
    templates: PromptTemplates | None = None,
) -> tuple[list[CandidateScore], list[tuple[str, str]]]:
    """Prompt once per candidate for a score in [-1, 1] plus explanation.
    Unparseable responses exclude the candidate and are returned as
    (doc_id, reason) failures."""
    if not candidates:
        raise ValueError("no candidates to score")
    templates = templates or PromptTemplates.default()

    def one(candidate: Document):
        prompt = render_scs_prompt(templates, query.text, candidate.text, method.instructions)
        response = gateway.complete(prompt)
        try:
            value, explanation = parse_score_response(response)
        except ValueError as exc:
            return candidate.id, str(exc)
        return CandidateScore(doc_id=candidate.id, score=value, explanation=explanation)

    scores: list[CandidateScore] = []
    failures: list[tuple[str, str]] = []
    for outcome in _map_concurrently(gateway, one, list(candidates)):
        if isinstance(outcome, CandidateScore):
            scores.append(outcome)
        else:
            failures.append(outcome)
    return scores, failures


def pcs_llm(
    query: Document,
    candidates: Sequence[Document],
    method: RerankMethod,
    gateway: Gateway,
    templates: PromptTemplates | None = None,
) -> list[PairVerdict]:
    """Submit all n*(n-1) ordered candidate pairs (both presentation
    orders). Unparseable replies become neutral verdicts flagged with
    parse_failed."""
    if len(candidates) < 2:
        raise ValueError("pairwise scoring needs at least 2 candidates")
    templates = templates or PromptTemplates.default()
    pairs = [
        (a, b)
        for a in candidates
        for b in candidates
        if a.id != b.id
    ]

    def one(pair: tuple[Document, Document]) -> PairVerdict:
        a, b = pair
        prompt = render_pcs_prompt(templates, query.text, a.text, b.text, method.instructions)
        response = gateway.complete(prompt)
        try:
            verdict, explanation = parse_verdict_response(response)
        except ValueError:
            logger.warning("pair (%s, %s): unparseable verdict, recording neutral", a.id, b.id)
            return PairVerdict(doc_first=a.id, doc_second=b.id, verdict=0, parse_failed=True)
        return PairVerdict(doc_first=a.id, doc_second=b.id, verdict=verdict, explanation=explanation)

    return _map_concurrently(gateway, one, pairs)


def aggregate_pair_verdicts(
    verdicts: Iterable[PairVerdict], candidates: Iterable[str] | None = None
) -> dict[str, int]:
    """Sum every comparison into per-candidate totals: verdict (a, b, v)
    adds v to a and subtracts v from b. The result is independent of
    verdict order."""
    totals: dict[str, int] = {c: 0 for c in candidates} if candidates is not None else {}
    known = set(totals) if candidates is not None else None
    for v in verdicts:
        if known is not None and (v.doc_first not in known or v.doc_second not in known):
            raise ValueError(
                f"verdict references unknown candidate: ({v.doc_first}, {v.doc_second})"
            )
        totals[v.doc_first] = totals.get(v.doc_first, 0) + v.verdict
        totals[v.doc_second] = totals.get(v.doc_second, 0) - v.verdict
    return totals


def rerank(
    query: Document,
    candidates: Sequence[Document],
    method: RerankMethod,
    gateway: Gateway,
    templates: PromptTemplates | None = None,
    instructions_version: int | None = None,
) -> RerankResult:
    """Run one reranking method over a query's candidates and return the
    scored, competition-ranked result with all raw artifacts attached."""
    if not candidates:
        raise ValueError("no candidates to rerank")
    verdicts: list[PairVerdict] = []
    failures: list[tuple[str, str]] = []
    if method.kind == "scs_emb":
        scores = scs_embed(query, candidates, gateway)
    elif method.kind == "scs_llm":
        scores, failures = scs_llm(query, candidates, method, gateway, templates)
    else:
        verdicts = pcs_llm(query, candidates, method, gateway, templates)
        totals = aggregate_pair_verdicts(verdicts, [c.id for c in candidates])
        explanations = {}
        for v in verdicts:
            if v.explanation and v.doc_first not in explanations:
                explanations[v.doc_first] = v.explanation
        scores = [
            CandidateScore(doc_id=d, score=float(t), explanation=explanations.get(d))
            for d, t in totals.items()
        ]
    if not scores:
        raise RerankFailure(
            f"query {query.id!r}: no candidate could be scored "
            f"({len(failures)} parse failures)"
        )
    ranking = rank_by_score(query.id, {s.doc_id: s.score for s in scores})
    return RerankResult(
        query_id=query.id,
        method=method,
        candidate_scores=sorted(scores, key=lambda s: s.doc_id),
        ranking=ranking,
        pair_verdicts=verdicts,
        failures=failures,
        instructions_version=instructions_version,
    )
