"""Dataset generation: select judged queries, filter their candidate
lists, rerank, and export the ranked results as the training signal."""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import CandidatePool, Document
from .gateway import Gateway
from .rerank import PromptTemplates, RerankMethod, rerank

logger = logging.getLogger(__name__)

DATASET_VERSION = 1

ORACLE_STATUSES = ("unreviewed", "accepted", "corrected", "rejected")


class PipelineError(ValueError):
    """Generation could not produce any record."""


class DatasetSchemaError(ValueError):
    """A dataset file does not match the expected schema."""


@dataclass(frozen=True)
class FilterSpec:
    """The valid-data-point filter: candidate count bounds, optionally
    requiring at least two distinct grades so the list carries contrast."""

    min_candidates: int = 2
    max_candidates: int = 30
    require_grade_diversity: bool = False

    def __post_init__(self):
        if not 1 <= self.min_candidates <= self.max_candidates:
            raise ValueError("need 1 <= min_candidates <= max_candidates")


@dataclass(frozen=True)
class RecordEntry:
    doc_id: str
    score: float | None
    rank: int


@dataclass
class DatasetRecord:
    query_id: str
    entries: list[RecordEntry]
    method: str
    oracle_status: str = "unreviewed"

    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]


@dataclass
class GenerationManifest:
    method: str
    seed: int
    config_hash: str
    t: int
    filter_spec: FilterSpec
    version: int = DATASET_VERSION
    created_at: str = ""
    instructions_version: int | None = None
    ledger: dict = field(default_factory=dict)
    failures: list[tuple[str, str]] = field(default_factory=list)  # (query_id, reason)


@dataclass
class GeneratedDataset:
    records: list[DatasetRecord]
    manifest: GenerationManifest

    def training_records(self) -> list[DatasetRecord]:
        return [r for r in self.records if r.oracle_status != "rejected"]


def apply_filter(
    query: Document | None,
    candidates: Sequence[tuple[str, int]],
    spec: FilterSpec,
) -> bool:
    """True iff the candidate list size is within bounds and, when
    required, at least two distinct grades are present."""
    n = len(candidates)
    if not spec.min_candidates <= n <= spec.max_candidates:
        return False
    if spec.require_grade_diversity and len({g for _, g in candidates}) < 2:
        return False
    return True


def config_hash(
    method: RerankMethod,
    templates: PromptTemplates,
    seed: int,
    filter_spec: FilterSpec,
    t: int,
) -> str:
    """Hash of every generation-relevant setting; changes exactly when one
    of them does."""
    payload = json.dumps(
        {
            "method_kind": method.kind,
            "instructions": method.instructions,
            "scs_template": templates.scs,
            "pcs_template": templates.pcs,
            "seed": seed,
            "filter": [
                filter_spec.min_candidates,
                filter_spec.max_candidates,
                filter_spec.require_grade_diversity,
            ],
            "t": t,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def generate(
    documents: Mapping[str, Document],
    pools: Sequence[CandidatePool],
    method: RerankMethod,
    filter_spec: FilterSpec,
    t: int,
    gateway: Gateway,
    templates: PromptTemplates | None = None,
    seed: int = 0,
    query_ids: Sequence[str] | None = None,
    instructions_version: int | None = None,
) -> GeneratedDataset:
    """Rerank every judged pool that passes the filter, truncate each
    ranking to its top t entries, and package the results with a
    provenance manifest. Per-query failures are recorded in the manifest
    without aborting the batch."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if t < filter_spec.min_candidates:
        raise ValueError(
            f"t={t} below the filter's min_candidates={filter_spec.min_candidates}; "
            "truncated records would fail their own filter"
        )
    templates = templates or PromptTemplates.default()
    wanted = set(query_ids) if query_ids is not None else None

    selected: list[CandidatePool] = []
    for pool in sorted(pools, key=lambda p: p.query_id):
        if wanted is not None and pool.query_id not in wanted:
            continue
        query = documents.get(pool.query_id)
        if query is None:
            raise PipelineError(f"query document {pool.query_id!r} not in corpus")
        if apply_filter(query, pool.candidates, filter_spec):
            selected.append(pool)
    if not selected:
        raise PipelineError("no query passed the candidate-list filter")

    records: list[DatasetRecord] = []
    failures: list[tuple[str, str]] = []
    last_error: Exception | None = None
    for pool in selected:
        query = documents[pool.query_id]
        candidates = [documents[d] for d, _ in pool.candidates]
        try:
            result = rerank(
                query, candidates, method, gateway, templates,
                instructions_version=instructions_version,
            )
        except Exception as exc:
            logger.warning("query %s: reranking failed: %s", pool.query_id, exc)
            failures.append((pool.query_id, str(exc)))
            last_error = exc
            continue
        entries = [
            RecordEntry(doc_id=e.doc_id, score=e.score, rank=e.rank)
            for e in result.ranking.entries[:t]
        ]
        records.append(
            DatasetRecord(
                query_id=pool.query_id,
                entries=entries,
                method=method.label,
                oracle_status="unreviewed",
            )
        )

    if not records and last_error is not None:
        # partial failure is tolerated, total failure propagates its cause
        raise last_error

    manifest = GenerationManifest(
        method=method.label,
        seed=seed,
        config_hash=config_hash(method, templates, seed, filter_spec, t),
        t=t,
        filter_spec=filter_spec,
        created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        instructions_version=instructions_version,
        ledger=gateway.ledger.snapshot(),
        failures=failures,
    )
    return GeneratedDataset(records=records, manifest=manifest)


def dataset_signal(dataset: GeneratedDataset) -> dict[str, list[tuple[str, float]]]:
    """Flatten a generated dataset into the per-query (doc, score) signal
    consumed by the tuner. Rejected records are excluded; corrected records
    without scores fall back to descending rank order values."""
    signal: dict[str, list[tuple[str, float]]] = {}
    for record in dataset.training_records():
        entries = []
        n = len(record.entries)
        for e in record.entries:
            value = e.score if e.score is not None else float(n - e.rank + 1)
            entries.append((e.doc_id, value))
        signal[record.query_id] = entries
    return signal


def manifest_to_dict(m: GenerationManifest) -> dict:
    return {
        "kind": "manifest",
        "version": m.version,
        "method": m.method,
        "seed": m.seed,
        "config_hash": m.config_hash,
        "t": m.t,
        "filter": {
            "min_candidates": m.filter_spec.min_candidates,
            "max_candidates": m.filter_spec.max_candidates,
            "require_grade_diversity": m.filter_spec.require_grade_diversity,
        },
        "created_at": m.created_at,
        "instructions_version": m.instructions_version,
        "ledger": m.ledger,
        "failures": [[q, r] for q, r in m.failures],
    }


def export_dataset(dataset: GeneratedDataset, path: str | Path) -> None:
    """Write JSONL: the manifest first, then one record per line."""
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(json.dumps(manifest_to_dict(dataset.manifest), sort_keys=True) + "\n")
        for record in dataset.records:
            rec = {
                "kind": "record",
                "query_id": record.query_id,
                "method": record.method,
                "oracle_status": record.oracle_status,
                "entries": [
                    {"doc_id": e.doc_id, "score": e.score, "rank": e.rank}
                    for e in record.entries
                ],
            }
            fp.write(json.dumps(rec, sort_keys=True) + "\n")


def import_dataset(path: str | Path) -> GeneratedDataset:
    """Read a dataset produced by export_dataset. Schema violations name
    the record index; unparseable lines name the byte offset."""
    manifest: GenerationManifest | None = None
    records: list[DatasetRecord] = []
    offset = 0
    record_index = 0
    with open(path, "rb") as fp:
        for raw in fp:
            line_offset = offset
            offset += len(raw)
            text = raw.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DatasetSchemaError(
                    f"{path}: invalid JSON at byte offset {line_offset}: {exc}"
                ) from exc
            kind = rec.get("kind")
            if kind == "manifest":
                if rec.get("version") != DATASET_VERSION:
                    raise DatasetSchemaError(
                        f"{path}: unsupported dataset version {rec.get('version')}"
                    )
                filt = rec.get("filter") or {}
                manifest = GenerationManifest(
                    method=rec["method"],
                    seed=int(rec["seed"]),
                    config_hash=rec["config_hash"],
                    t=int(rec["t"]),
                    filter_spec=FilterSpec(
                        min_candidates=int(filt["min_candidates"]),
                        max_candidates=int(filt["max_candidates"]),
                        require_grade_diversity=bool(filt["require_grade_diversity"]),
                    ),
                    version=int(rec["version"]),
                    created_at=rec.get("created_at", ""),
                    instructions_version=rec.get("instructions_version"),
                    ledger=rec.get("ledger", {}),
                    failures=[(q, r) for q, r in rec.get("failures", [])],
                )
            elif kind == "record":
                try:
                    status = rec["oracle_status"]
                    if status not in ORACLE_STATUSES:
                        raise KeyError(f"bad oracle_status {status!r}")
                    entries = [
                        RecordEntry(
                            doc_id=e["doc_id"],
                            score=None if e["score"] is None else float(e["score"]),
                            rank=int(e["rank"]),
                        )
                        for e in rec["entries"]
                    ]
                    records.append(
                        DatasetRecord(
                            query_id=rec["query_id"],
                            entries=entries,
                            method=rec["method"],
                            oracle_status=status,
                        )
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise DatasetSchemaError(
                        f"{path}: malformed record at index {record_index}: {exc}"
                    ) from exc
                record_index += 1
            else:
                raise DatasetSchemaError(
                    f"{path}: unknown record kind {kind!r} at byte offset {line_offset}"
                )
    if manifest is None:
        raise DatasetSchemaError(f"{path}: missing manifest line")
    return GeneratedDataset(records=records, manifest=manifest)
