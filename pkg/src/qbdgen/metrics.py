"""Ranking comparison and retrieval quality metrics.

Competition ranking, Kendall tau-b, Spearman rho, Precision@K, average
precision, MAP and MRR. All functions are pure; metrics that would divide
by zero raise UndefinedMetricError instead of returning a silent 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

DEFAULT_PRECISION_KS = (1, 3, 5, 10)


class UndefinedMetricError(ValueError):
    """The metric has no defined value for this input (zero denominator)."""


@dataclass(frozen=True)
class RankingEntry:
    doc_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class Ranking:
    """An ordered candidate list. Entries are sorted by descending score and
    carry competition ranks: tied scores share a rank, the next distinct
    score gets rank 1 + number of preceding entries."""

    query_id: str
    entries: tuple[RankingEntry, ...]

    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def rank_of(self, doc_id: str) -> int:
        for e in self.entries:
            if e.doc_id == doc_id:
                return e.rank
        raise KeyError(doc_id)


@dataclass(frozen=True)
class TieCounts:
    """Classification of all n(n-1)/2 index pairs of two aligned rank lists."""

    concordant: int
    discordant: int
    ties_first_only: int
    ties_second_only: int
    ties_both: int

    @property
    def total(self) -> int:
        return (
            self.concordant
            + self.discordant
            + self.ties_first_only
            + self.ties_second_only
            + self.ties_both
        )


@dataclass
class MetricReport:
    tau_b: float
    spearman_rho: float
    map: float
    mrr: float
    precision_at_k: dict[int, float] = field(default_factory=dict)

    def to_json(self) -> str:
        flat: dict[str, float] = {
            "tau_b": self.tau_b,
            "spearman_rho": self.spearman_rho,
            "map": self.map,
            "mrr": self.mrr,
        }
        for k in sorted(self.precision_at_k):
            flat[f"p@{k}"] = self.precision_at_k[k]
        return json.dumps(flat, sort_keys=True)


def assign_competition_ranks(scores: Sequence[float]) -> list[int]:
    """Competition rank for each position: 1 + the number of strictly
    greater scores. Tied scores share the smallest applicable rank and the
    next distinct score skips past the tie group, e.g. [0.9, 0.9, 0.5]
    ranks as [1, 1, 3]."""
    for s in scores:
        if math.isnan(s):
            raise ValueError("cannot rank NaN scores")
    sorted_scores = sorted(scores, reverse=True)
    ranks = []
    for s in scores:
        # bisect on the descending list: count of entries strictly greater
        lo, hi = 0, len(sorted_scores)
        while lo < hi:
            mid = (lo + hi) // 2
            if sorted_scores[mid] > s:
                lo = mid + 1
            else:
                hi = mid
        ranks.append(lo + 1)
    return ranks


def rank_by_score(query_id: str, scores: Mapping[str, float]) -> Ranking:
    """Build a Ranking from doc scores: descending score with a lexical
    doc_id tie-break for a reproducible order, then competition ranks."""
    if not scores:
        raise ValueError("cannot rank an empty score map")
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    ranks = assign_competition_ranks([s for _, s in ordered])
    entries = tuple(
        RankingEntry(doc_id=d, score=s, rank=r) for (d, s), r in zip(ordered, ranks)
    )
    return Ranking(query_id=query_id, entries=entries)


def pair_counts(ranks_x: Sequence[float], ranks_y: Sequence[float]) -> TieCounts:
    """Classify every index pair of two positionally aligned lists as
    concordant, discordant, tied in the first variable only, tied in the
    second only, or tied in both."""
    if len(ranks_x) != len(ranks_y):
        raise ValueError(f"length mismatch: {len(ranks_x)} vs {len(ranks_y)}")
    if len(ranks_x) < 2:
        raise UndefinedMetricError("need at least 2 observations to form pairs")
    c = d = t1 = t2 = tb = 0
    n = len(ranks_x)
    for i in range(n):
        for j in range(i + 1, n):
            dx = ranks_x[i] - ranks_x[j]
            dy = ranks_y[i] - ranks_y[j]
            if dx == 0 and dy == 0:
                tb += 1
            elif dx == 0:
                t1 += 1
            elif dy == 0:
                t2 += 1
            elif (dx > 0) == (dy > 0):
                c += 1
            else:
                d += 1
    return TieCounts(c, d, t1, t2, tb)


def kendall_tau_b(ranks_x: Sequence[float], ranks_y: Sequence[float]) -> float:
    """Tie-aware Kendall correlation:
    (C - D) / sqrt((C + D + T1) * (C + D + T2)).
    Pairs tied in both variables count toward neither T1 nor T2."""
    counts = pair_counts(ranks_x, ranks_y)
    den1 = counts.concordant + counts.discordant + counts.ties_first_only
    den2 = counts.concordant + counts.discordant + counts.ties_second_only
    if den1 == 0 or den2 == 0:
        raise UndefinedMetricError("tau_b undefined: all pairs tied in one variable")
    return (counts.concordant - counts.discordant) / math.sqrt(den1 * den2)


def fractional_ranks(values: Sequence[float]) -> list[float]:
    """Average (fractional) ranks, descending: the highest value gets rank 1
    and tied values share the mean of the ranks they occupy."""
    order = sorted(range(len(values)), key=lambda i: -values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def spearman_rho(scores_x: Sequence[float], scores_y: Sequence[float]) -> float:
    """Pearson correlation of fractional ranks of the two score lists."""
    if len(scores_x) != len(scores_y):
        raise ValueError(f"length mismatch: {len(scores_x)} vs {len(scores_y)}")
    if len(scores_x) < 2:
        raise UndefinedMetricError("need at least 2 observations to correlate")
    rx = fractional_ranks(scores_x)
    ry = fractional_ranks(scores_y)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    var_x = sum((a - mx) ** 2 for a in rx)
    var_y = sum((b - my) ** 2 for b in ry)
    if var_x == 0 or var_y == 0:
        raise UndefinedMetricError("spearman_rho undefined: zero rank variance")
    return num / math.sqrt(var_x * var_y)


def precision_at_k(ranked_doc_ids: Sequence[str], relevant: set[str], k: int) -> float:
    """Fraction of relevant documents in the top k, with k capped at the
    list length."""
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, len(ranked_doc_ids))
    if k == 0:
        return 0.0
    hits = sum(1 for d in ranked_doc_ids[:k] if d in relevant)
    return hits / k


def average_precision(ranked_doc_ids: Sequence[str], relevant: set[str]) -> float:
    """(1/R) * sum over positions k of Precision(k) * rel(k), where R is the
    total number of relevant documents and rel(k) indicates relevance at
    position k."""
    if not relevant:
        raise UndefinedMetricError("average precision undefined for an empty relevant set")
    hits = 0
    total = 0.0
    for k, doc_id in enumerate(ranked_doc_ids, start=1):
        if doc_id in relevant:
            hits += 1
            total += hits / k
    return total / len(relevant)


def mean_average_precision(per_query_aps: Sequence[float]) -> float:
    if not per_query_aps:
        raise UndefinedMetricError("MAP undefined over an empty query set")
    return sum(per_query_aps) / len(per_query_aps)


def mean_reciprocal_rank(first_relevant_ranks: Iterable[int | None]) -> float:
    """Mean of 1/rank of the first relevant document per query. Queries
    where no relevant document was retrieved (rank None) contribute 0."""
    ranks = list(first_relevant_ranks)
    if not ranks:
        raise UndefinedMetricError("MRR undefined over an empty query set")
    return sum(0.0 if r is None else 1.0 / r for r in ranks) / len(ranks)


def evaluate_ranking(
    predicted: Ranking,
    truth: Sequence[tuple[str, int]],
    relevance_threshold: int = 1,
    ks: Sequence[int] = DEFAULT_PRECISION_KS,
) -> MetricReport:
    """Score one predicted ranking against a graded truth list.

    The truth list is ranked by descending grade with competition ranks;
    tau_b and rho compare the predicted ranks to those truth ranks. The
    precision family treats grade >= relevance_threshold as relevant and
    reads the predicted order. The per-query report stores the query's AP
    under `map` and its reciprocal rank under `mrr`; aggregate over queries
    with aggregate_reports.
    """
    truth_grades = {doc_id: grade for doc_id, grade in truth}
    predicted_docs = set(predicted.doc_ids())
    if predicted_docs != set(truth_grades):
        missing = set(truth_grades) - predicted_docs
        extra = predicted_docs - set(truth_grades)
        raise ValueError(
            f"predicted and truth doc sets differ (missing={sorted(missing)[:5]}, "
            f"extra={sorted(extra)[:5]})"
        )

    doc_order = sorted(truth_grades)
    truth_ranks = assign_competition_ranks([truth_grades[d] for d in doc_order])
    truth_rank_of = dict(zip(doc_order, truth_ranks))
    pred_rank_of = {e.doc_id: e.rank for e in predicted.entries}

    xs = [float(pred_rank_of[d]) for d in doc_order]
    ys = [float(truth_rank_of[d]) for d in doc_order]
    tau = kendall_tau_b(xs, ys)
    rho = spearman_rho(xs, ys)

    relevant = {d for d, g in truth_grades.items() if g >= relevance_threshold}
    ranked_ids = predicted.doc_ids()
    ap = average_precision(ranked_ids, relevant)
    first_rank = None
    for entry in predicted.entries:
        if entry.doc_id in relevant:
            first_rank = entry.rank
            break
    rr = 0.0 if first_rank is None else 1.0 / first_rank
    p_at_k = {k: precision_at_k(ranked_ids, relevant, k) for k in ks}
    return MetricReport(tau_b=tau, spearman_rho=rho, map=ap, mrr=rr, precision_at_k=p_at_k)


def aggregate_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Macro-average per-query reports into one."""
    if not reports:
        raise UndefinedMetricError("cannot aggregate zero reports")
    n = len(reports)
    ks = sorted({k for r in reports for k in r.precision_at_k})
    return MetricReport(
        tau_b=sum(r.tau_b for r in reports) / n,
        spearman_rho=sum(r.spearman_rho for r in reports) / n,
        map=sum(r.map for r in reports) / n,
        mrr=sum(r.mrr for r in reports) / n,
        precision_at_k={
            k: sum(r.precision_at_k.get(k, 0.0) for r in reports) / n for k in ks
        },
    )
