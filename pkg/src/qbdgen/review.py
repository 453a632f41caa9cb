"""The human-review loop: a persistent queue of reranking results that an
expert can accept, correct, or reject, plus the editable instructions
document that feeds back into reranking prompts.

Persistence is an append-only JSONL action log with periodic snapshots;
replaying the log from scratch reconstructs the exact store state. Writers
serialize through one lock and use optimistic concurrency: every action
names the revision it expects, and a concurrent change surfaces as a
RevisionConflictError instead of a silent overwrite.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import os
import threading
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Document
from .metrics import rank_by_score
from .pipeline import (
    DatasetRecord,
    FilterSpec,
    GeneratedDataset,
    GenerationManifest,
    RecordEntry,
)
from .rerank import RerankResult

EVENTS_FILE = "events.jsonl"
SNAPSHOT_FILE = "snapshot.json"

STATUSES = ("pending", "accepted", "corrected", "rejected")
ACTION_TYPES = ("accept", "reject", "correct", "correct_pair")


class UnknownItemError(KeyError):
    pass


class RevisionConflictError(RuntimeError):
    def __init__(self, item_id: str, expected: int, current: int):
        super().__init__(
            f"item {item_id}: expected revision {expected} but store has {current}"
        )
        self.expected = expected
        self.current = current


class InvalidActionError(ValueError):
    pass


class NothingToExportError(ValueError):
    pass


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@dataclass
class InstructionsDoc:
    text: str = ""
    version: int = 0
    updated_at: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReviewItem:
    id: str
    revision: int
    status: str
    query_id: str
    query_text: str
    method: str
    candidates: dict[str, str]  # doc_id -> text
    proposed: list[dict]  # [{doc_id, score, rank}]
    explanations: dict[str, str] = field(default_factory=dict)
    verdicts: list[dict] = field(default_factory=list)
    overrides: dict[str, int] = field(default_factory=dict)  # "first||second" -> verdict
    corrected: list[dict] | None = None
    reject_reason: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ReviewItem":
        return cls(**data)

    def current_ranking(self) -> list[dict]:
        return self.corrected if self.corrected is not None else self.proposed


def _pair_key(first: str, second: str) -> str:
    return f"{first}||{second}"


def result_to_payload(result: RerankResult, documents: Mapping[str, Document]) -> dict:
    """Serialize a rerank result plus the texts the reviewer needs to see."""
    return {
        "query_id": result.query_id,
        "query_text": documents[result.query_id].text,
        "method": result.method.label,
        "candidates": {e.doc_id: documents[e.doc_id].text for e in result.ranking.entries},
        "proposed": [
            {"doc_id": e.doc_id, "score": e.score, "rank": e.rank}
            for e in result.ranking.entries
        ],
        "explanations": {
            s.doc_id: s.explanation for s in result.candidate_scores if s.explanation
        },
        "verdicts": [
            {
                "doc_first": v.doc_first,
                "doc_second": v.doc_second,
                "verdict": v.verdict,
                "explanation": v.explanation,
                "parse_failed": v.parse_failed,
            }
            for v in result.pair_verdicts
        ],
    }


def payload_item_id(payload: dict) -> str:
    """Deterministic item id: the same result enqueues to the same id."""
    canonical = json.dumps(
        {
            "query_id": payload["query_id"],
            "method": payload["method"],
            "proposed": payload["proposed"],
            "verdicts": payload.get("verdicts", []),
        },
        sort_keys=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _apply_action_to_item(item: ReviewItem, action: dict) -> None:
    """Mutate an item per one reviewer action. Used identically by the live
    path and by log replay, so replay reconstructs state exactly."""
    kind = action.get("type")
    if kind == "accept":
        item.status = "accepted"
        item.corrected = None
        item.overrides = {}
        item.reject_reason = None
    elif kind == "reject":
        item.status = "rejected"
        item.corrected = None
        item.overrides = {}
        item.reject_reason = action.get("reason")
    elif kind == "correct":
        order = action.get("order")
        if not isinstance(order, list) or sorted(order) != sorted(item.candidates):
            raise InvalidActionError(
                "corrected order must be a permutation of the item's candidates"
            )
        item.status = "corrected"
        item.corrected = [
            {"doc_id": d, "score": None, "rank": i + 1} for i, d in enumerate(order)
        ]
        item.reject_reason = None
    elif kind == "correct_pair":
        first, second = action.get("doc_first"), action.get("doc_second")
        verdict = action.get("verdict")
        if first not in item.candidates or second not in item.candidates or first == second:
            raise InvalidActionError(f"unknown pair ({first}, {second})")
        if not item.verdicts:
            raise InvalidActionError("item has no pairwise verdicts to correct")
        if verdict not in (-1, 0, 1):
            raise InvalidActionError(f"verdict must be -1, 0 or 1, got {verdict!r}")
        # The human is order-insensitive: override both presentation orders.
        item.overrides[_pair_key(first, second)] = verdict
        item.overrides[_pair_key(second, first)] = -verdict
        totals = {doc_id: 0 for doc_id in item.candidates}
        for v in item.verdicts:
            key = _pair_key(v["doc_first"], v["doc_second"])
            effective = item.overrides.get(key, v["verdict"])
            totals[v["doc_first"]] += effective
            totals[v["doc_second"]] -= effective
        ranking = rank_by_score(item.query_id, {d: float(t) for d, t in totals.items()})
        item.status = "corrected"
        item.corrected = [
            {"doc_id": e.doc_id, "score": e.score, "rank": e.rank} for e in ranking.entries
        ]
        item.reject_reason = None
    else:
        raise InvalidActionError(f"unknown action type {kind!r}")
    item.revision += 1


class ReviewStore:
    """Event-sourced item store rooted at a directory."""

    def __init__(self, directory: str | Path, snapshot_interval: int = 50):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.snapshot_interval = snapshot_interval
        self._lock = threading.RLock()
        self._items: dict[str, ReviewItem] = {}
        self._instructions = InstructionsDoc()
        self._seq = 0
        self._events_since_snapshot = 0
        self._load()
        self._events_fp = open(self.directory / EVENTS_FILE, "a", encoding="utf-8")

    # -- persistence ------------------------------------------------------

    def _load(self) -> None:
        snap_path = self.directory / SNAPSHOT_FILE
        if snap_path.exists():
            snap = json.loads(snap_path.read_text(encoding="utf-8"))
            self._seq = snap["seq"]
            self._items = {
                item_id: ReviewItem.from_dict(data) for item_id, data in snap["items"].items()
            }
            self._instructions = InstructionsDoc(**snap["instructions"])
        events_path = self.directory / EVENTS_FILE
        if events_path.exists():
            with open(events_path, encoding="utf-8") as fp:
                for line in fp:
                    if not line.strip():
                        continue
                    event = json.loads(line)
                    if event["seq"] <= self._seq:
                        continue
                    self._replay_event(event)
                    self._seq = event["seq"]

    def _replay_event(self, event: dict) -> None:
        kind = event["type"]
        if kind == "enqueue":
            item = ReviewItem.from_dict(event["item"])
            self._items[item.id] = item
        elif kind == "action":
            item = self._items[event["item_id"]]
            _apply_action_to_item(item, event["action"])
        elif kind == "instructions":
            self._instructions = InstructionsDoc(**event["instructions"])
        else:
            raise ValueError(f"unknown event type {kind!r} in log")

    def _append_event(self, event_type: str, **payload) -> None:
        self._seq += 1
        event = {"seq": self._seq, "ts": _now(), "type": event_type, **payload}
        self._events_fp.write(json.dumps(event, sort_keys=True) + "\n")
        self._events_fp.flush()
        os.fsync(self._events_fp.fileno())
        self._events_since_snapshot += 1
        if self._events_since_snapshot >= self.snapshot_interval:
            self._write_snapshot()

    def _write_snapshot(self) -> None:
        snap = {
            "seq": self._seq,
            "items": {item_id: item.to_dict() for item_id, item in self._items.items()},
            "instructions": self._instructions.to_dict(),
        }
        tmp = self.directory / (SNAPSHOT_FILE + ".tmp")
        tmp.write_text(json.dumps(snap, sort_keys=True), encoding="utf-8")
        tmp.replace(self.directory / SNAPSHOT_FILE)
        self._events_since_snapshot = 0

    def close(self) -> None:
        with self._lock:
            self._events_fp.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- reads ------------------------------------------------------------

    def get_item(self, item_id: str) -> ReviewItem:
        item = self._items.get(item_id)
        if item is None:
            raise UnknownItemError(item_id)
        return item

    def list_items(self, status: str | None = None) -> list[ReviewItem]:
        items = sorted(self._items.values(), key=lambda i: (i.query_id, i.id))
        if status is None:
            return items
        if status not in STATUSES:
            raise ValueError(f"unknown status {status!r}")
        return [i for i in items if i.status == status]

    def instructions(self) -> InstructionsDoc:
        return self._instructions

    # -- writes -----------------------------------------------------------

    def enqueue_payload(self, payload: dict) -> str:
        """Persist one serialized rerank result as a pending item.
        Re-enqueueing an identical result returns the existing id."""
        item_id = payload_item_id(payload)
        with self._lock:
            if item_id in self._items:
                return item_id
            item = ReviewItem(
                id=item_id,
                revision=0,
                status="pending",
                query_id=payload["query_id"],
                query_text=payload["query_text"],
                method=payload["method"],
                candidates=dict(payload["candidates"]),
                proposed=[dict(e) for e in payload["proposed"]],
                explanations=dict(payload.get("explanations", {})),
                verdicts=[dict(v) for v in payload.get("verdicts", [])],
            )
            self._items[item.id] = item
            self._append_event("enqueue", item=item.to_dict())
            return item_id

    def enqueue(
        self, results: Sequence[RerankResult], documents: Mapping[str, Document]
    ) -> list[str]:
        return [self.enqueue_payload(result_to_payload(r, documents)) for r in results]

    def apply_action(self, item_id: str, expected_revision: int, action: dict) -> ReviewItem:
        """Apply one reviewer action under optimistic concurrency. Exactly
        one of two racing writers succeeds; the other gets a conflict."""
        with self._lock:
            item = self.get_item(item_id)
            if item.revision != expected_revision:
                raise RevisionConflictError(item_id, expected_revision, item.revision)
            # Validate against a copy so a bad action leaves the item unchanged.
            trial = ReviewItem.from_dict(item.to_dict())
            _apply_action_to_item(trial, action)
            self._items[item_id] = trial
            self._append_event("action", item_id=item_id, action=action)
            return trial

    def update_instructions(self, text: str, expected_version: int | None = None) -> InstructionsDoc:
        with self._lock:
            current = self._instructions
            if expected_version is not None and current.version != expected_version:
                raise RevisionConflictError("instructions", expected_version, current.version)
            doc = InstructionsDoc(text=text, version=current.version + 1, updated_at=_now())
            self._instructions = doc
            self._append_event("instructions", instructions=doc.to_dict())
            return doc

    def export_reviewed(self, statuses: Iterable[str] = ("accepted", "corrected")) -> GeneratedDataset:
        """Bundle reviewed items into a dataset: corrected items export
        their corrected ranking, accepted ones the proposed ranking.
        Rejected and pending items are never exported."""
        wanted = set(statuses)
        unknown = wanted - set(STATUSES)
        if unknown:
            raise ValueError(f"unknown statuses: {sorted(unknown)}")
        exportable = wanted & {"accepted", "corrected"}
        with self._lock:
            chosen = [i for i in self.list_items() if i.status in exportable]
            if not chosen:
                raise NothingToExportError(
                    f"no items in statuses {sorted(exportable) or sorted(wanted)}"
                )
            records = []
            methods = set()
            for item in chosen:
                entries = item.current_ranking()
                records.append(
                    DatasetRecord(
                        query_id=item.query_id,
                        entries=[
                            RecordEntry(doc_id=e["doc_id"], score=e["score"], rank=e["rank"])
                            for e in entries
                        ],
                        method=item.method,
                        oracle_status=item.status,
                    )
                )
                methods.add(item.method)
            max_len = max(len(r.entries) for r in records)
            digest = hashlib.sha256(
                json.dumps(
                    [[i.id, i.revision] for i in chosen], sort_keys=True
                ).encode("utf-8")
            ).hexdigest()
            manifest = GenerationManifest(
                method="+".join(sorted(methods)),
                seed=0,
                config_hash=digest,
                t=max_len,
                filter_spec=FilterSpec(min_candidates=1, max_candidates=max(max_len, 1)),
                created_at=_now(),
                instructions_version=self._instructions.version,
            )
            return GeneratedDataset(records=records, manifest=manifest)
