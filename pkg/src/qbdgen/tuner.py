"""Seeded search over BM25 {k1, b} maximizing mean average precision
against a training signal.

Trial 0 always evaluates the default point {1.5, 0.75}, so the tuned
training objective can never fall below the default's. The remaining
trials sample the box uniformly at random from the given seed. A full
grid sweep is available for oracle checks.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from .bm25 import Bm25Index, Bm25Params, rank_candidates
from .metrics import (
    MetricReport,
    UndefinedMetricError,
    aggregate_reports,
    average_precision,
    evaluate_ranking,
    mean_average_precision,
)

logger = logging.getLogger(__name__)

DEFAULT_PARAMS = Bm25Params(k1=1.5, b=0.75)

# Signal kinds and how each binarizes into relevant sets.
RULE_GRADE = "grade"  # ground truth: grade >= threshold
RULE_PCS = "pcs"      # pairwise totals: total > 0
RULE_SCS = "scs"      # pointwise scores: score >= threshold


@dataclass(frozen=True)
class RelevanceRule:
    kind: str = RULE_GRADE
    threshold: float = 1.0

    def __post_init__(self):
        if self.kind not in (RULE_GRADE, RULE_PCS, RULE_SCS):
            raise ValueError(f"unknown relevance rule kind {self.kind!r}")


@dataclass(frozen=True)
class TuneConfig:
    n_trials: int = 50
    k1_range: tuple[float, float] = (1.2, 2.0)
    b_range: tuple[float, float] = (0.1, 1.0)
    seed: int = 0
    rule: RelevanceRule = RelevanceRule()

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not self.k1_range[0] < self.k1_range[1] or not self.b_range[0] < self.b_range[1]:
            raise ValueError("parameter ranges must be non-degenerate")


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    params: Bm25Params
    objective: float


@dataclass
class TuneResult:
    best_params: Bm25Params
    best_objective: float
    history: list[TrialRecord]
    provenance: str = ""

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "best": {"k1": self.best_params.k1, "b": self.best_params.b},
            "best_objective": self.best_objective,
            "history": [
                {"trial": t.trial, "k1": t.params.k1, "b": t.params.b, "objective": t.objective}
                for t in self.history
            ],
        }


class TuneError(ValueError):
    """The signal leaves nothing to tune on."""


Signal = Mapping[str, Sequence[tuple[str, float]]]  # query -> [(doc_id, value)]


def signal_to_relevance(signal: Signal, rule: RelevanceRule) -> dict[str, set[str]]:
    """Binarize a per-query (doc, value) signal into relevant sets.

    Ground-truth values are grades compared against the threshold; pairwise
    totals count positive totals as relevant; pointwise scores compare
    against the threshold. Queries whose relevant set comes out empty are
    excluded with a warning since their AP is undefined.
    """
    if not signal:
        raise TuneError("empty signal")
    relevance: dict[str, set[str]] = {}
    for query_id in sorted(signal):
        entries = signal[query_id]
        if rule.kind == RULE_PCS:
            relevant = {d for d, v in entries if v > 0}
        else:
            relevant = {d for d, v in entries if v >= rule.threshold}
        if not relevant:
            logger.warning("query %s: empty relevant set under rule %s, excluded", query_id, rule.kind)
            continue
        relevance[query_id] = relevant
    return relevance


def _objective(
    index: Bm25Index,
    params: Bm25Params,
    queries: Mapping[str, str],
    signal: Signal,
    relevance: Mapping[str, set[str]],
    texts: Mapping[str, str] | None,
) -> float:
    aps = []
    for query_id in sorted(relevance):
        candidate_ids = [d for d, _ in signal[query_id]]
        ranking = rank_candidates(
            index, params, queries[query_id], candidate_ids, extra_texts=texts, query_id=query_id
        )
        aps.append(average_precision(ranking.doc_ids(), relevance[query_id]))
    return mean_average_precision(aps)


def tune(
    index: Bm25Index,
    queries: Mapping[str, str],
    signal: Signal,
    config: TuneConfig,
    texts: Mapping[str, str] | None = None,
    provenance: str = "",
) -> TuneResult:
    """Search the {k1, b} box for the parameters that maximize MAP of BM25
    rankings against the signal's relevant sets. Deterministic for a given
    seed; objective ties resolve to the earliest trial."""
    relevance = signal_to_relevance(signal, config.rule)
    evaluable = [q for q in relevance if q in queries]
    if not evaluable:
        raise TuneError("no evaluable queries: signal and query set do not overlap")
    relevance = {q: relevance[q] for q in evaluable}

    rng = random.Random(config.seed)
    history: list[TrialRecord] = []
    best: TrialRecord | None = None
    for trial in range(config.n_trials):
        if trial == 0:
            params = DEFAULT_PARAMS
        else:
            params = Bm25Params(
                k1=rng.uniform(*config.k1_range), b=rng.uniform(*config.b_range)
            )
        objective = _objective(index, params, queries, signal, relevance, texts)
        record = TrialRecord(trial=trial, params=params, objective=objective)
        history.append(record)
        if best is None or record.objective > best.objective:
            best = record
    assert best is not None
    return TuneResult(
        best_params=best.params,
        best_objective=best.objective,
        history=history,
        provenance=provenance,
    )


def grid_sweep(
    index: Bm25Index,
    queries: Mapping[str, str],
    signal: Signal,
    k1_values: Sequence[float],
    b_values: Sequence[float],
    rule: RelevanceRule = RelevanceRule(),
    texts: Mapping[str, str] | None = None,
    provenance: str = "grid",
) -> TuneResult:
    """Exhaustive lattice evaluation over the given k1 and b values; the
    oracle counterpart to the random search."""
    relevance = signal_to_relevance(signal, rule)
    evaluable = {q: relevance[q] for q in relevance if q in queries}
    if not evaluable:
        raise TuneError("no evaluable queries: signal and query set do not overlap")
    history: list[TrialRecord] = []
    best: TrialRecord | None = None
    trial = 0
    for k1 in k1_values:
        for b in b_values:
            params = Bm25Params(k1=k1, b=b)
            objective = _objective(index, params, queries, signal, evaluable, texts)
            record = TrialRecord(trial=trial, params=params, objective=objective)
            history.append(record)
            if best is None or record.objective > best.objective:
                best = record
            trial += 1
    assert best is not None
    return TuneResult(
        best_params=best.params,
        best_objective=best.objective,
        history=history,
        provenance=provenance,
    )


def evaluate_tuned(
    params: Bm25Params,
    index: Bm25Index,
    queries: Mapping[str, str],
    test_lists: Mapping[str, Sequence[tuple[str, int]]],
    relevance_threshold: int = 1,
    texts: Mapping[str, str] | None = None,
    ks: Sequence[int] = (1, 3, 5, 10),
) -> MetricReport:
    """Rank each test query's graded candidate list with the given
    parameters and macro-average the per-query metric reports. Queries
    whose metrics are undefined (no relevant docs, or fully tied lists)
    are skipped with a warning."""
    if not test_lists:
        raise ValueError("empty test set")
    unindexed = {
        d for entries in test_lists.values() for d, _ in entries if d not in index
    }
    if unindexed:
        logger.info("evaluation: %d candidate docs are outside the index, scoring on the fly", len(unindexed))
    reports = []
    for query_id in sorted(test_lists):
        entries = list(test_lists[query_id])
        ranking = rank_candidates(
            index, params, queries[query_id], [d for d, _ in entries],
            extra_texts=texts, query_id=query_id,
        )
        try:
            reports.append(evaluate_ranking(ranking, entries, relevance_threshold, ks))
        except UndefinedMetricError as exc:
            logger.warning("query %s: %s, skipped", query_id, exc)
    if not reports:
        raise UndefinedMetricError("no test query produced defined metrics")
    return aggregate_reports(reports)
