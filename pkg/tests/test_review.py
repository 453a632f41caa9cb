import json
import threading

import pytest
from fastapi.testclient import TestClient

from qbdgen.corpus import Document
from qbdgen.gateway import Gateway, GatewayConfig, StubBackend
from qbdgen.pipeline import import_dataset
from qbdgen.rerank import PromptTemplates, RerankMethod, rerank
from qbdgen.review import (
    InvalidActionError,
    NothingToExportError,
    ReviewStore,
    RevisionConflictError,
    UnknownItemError,
)
from qbdgen.review_http import create_app

from oracles import pcs_totals_oracle

FAST = GatewayConfig(backoff_base=0.0)

TEMPLATES = PromptTemplates(
    scs="score {{candidate}} for {{query}} {{instructions}}",
    pcs="q={{query}} first:{{candidate_a}} second:{{candidate_b}} {{instructions}}",
)


def ordered_stub(order):
    strength = {d: -i for i, d in enumerate(order)}

    def handler(prompt):
        first = prompt.split("first:")[1].split()[0]
        second = prompt.split("second:")[1].split()[0]
        v = (strength[first] > strength[second]) - (strength[first] < strength[second])
        return f'{{"verdict": {v}, "explanation": "{first} vs {second}"}}'

    return handler


def make_documents(ids):
    docs = {i: Document(id=i, text=i) for i in ids}
    docs["q1"] = Document(id="q1", text="the query")
    return docs


def make_result(order=("A", "B", "C"), query_id="q1"):
    documents = make_documents(order)
    gateway = Gateway(FAST, StubBackend(handler=ordered_stub(list(order))))
    return (
        rerank(documents[query_id], [documents[d] for d in order],
               RerankMethod("pcs_llm"), gateway, TEMPLATES),
        documents,
    )


class TestEnqueue:
    def test_batch_becomes_pending_items(self, tmp_path):
        results = []
        all_docs = {}
        for qi in range(5):
            ids = tuple(f"d{qi}{c}" for c in "abc")
            documents = {i: Document(id=i, text=i) for i in ids}
            documents[f"q{qi}"] = Document(id=f"q{qi}", text=f"query {qi}")
            gateway = Gateway(FAST, StubBackend(handler=ordered_stub(list(ids))))
            results.append(rerank(documents[f"q{qi}"], [documents[d] for d in ids],
                                  RerankMethod("pcs_llm"), gateway, TEMPLATES))
            all_docs.update(documents)
        with ReviewStore(tmp_path) as store:
            ids = store.enqueue(results, all_docs)
            assert len(ids) == 5
            assert all(store.get_item(i).status == "pending" for i in ids)
            assert all(store.get_item(i).revision == 0 for i in ids)

    def test_duplicate_enqueue_idempotent(self, tmp_path):
        result, documents = make_result()
        with ReviewStore(tmp_path) as store:
            first = store.enqueue([result], documents)
            second = store.enqueue([result], documents)
            assert first == second
            assert len(store.list_items()) == 1

    def test_empty_batch(self, tmp_path):
        with ReviewStore(tmp_path) as store:
            assert store.enqueue([], {}) == []


class TestActions:
    def _store_with_item(self, tmp_path):
        result, documents = make_result()
        store = ReviewStore(tmp_path)
        (item_id,) = store.enqueue([result], documents)
        return store, item_id

    def test_accept_bumps_revision(self, tmp_path):
        store, item_id = self._store_with_item(tmp_path)
        item = store.apply_action(item_id, 0, {"type": "accept"})
        assert item.status == "accepted"
        assert item.revision == 1

    def test_reject_with_reason(self, tmp_path):
        store, item_id = self._store_with_item(tmp_path)
        item = store.apply_action(item_id, 0, {"type": "reject", "reason": "bad query"})
        assert item.status == "rejected"
        assert item.reject_reason == "bad query"

    def test_correct_requires_permutation(self, tmp_path):
        store, item_id = self._store_with_item(tmp_path)
        with pytest.raises(InvalidActionError):
            store.apply_action(item_id, 0, {"type": "correct", "order": ["A", "B"]})
        item = store.get_item(item_id)
        assert item.revision == 0 and item.status == "pending"

    def test_correct_stores_order(self, tmp_path):
        store, item_id = self._store_with_item(tmp_path)
        item = store.apply_action(item_id, 0, {"type": "correct", "order": ["C", "A", "B"]})
        assert item.status == "corrected"
        assert [e["doc_id"] for e in item.corrected] == ["C", "A", "B"]
        assert [e["rank"] for e in item.corrected] == [1, 2, 3]

    def test_correct_pair_reaggregates_like_oracle(self, tmp_path):
        store, item_id = self._store_with_item(tmp_path)
        # Human flips (B, C): candidate C now beats B.
        item = store.apply_action(
            item_id, 0,
            {"type": "correct_pair", "doc_first": "B", "doc_second": "C", "verdict": -1},
        )
        assert item.status == "corrected"
        effective = []
        for v in item.verdicts:
            key = f"{v['doc_first']}||{v['doc_second']}"
            effective.append((v["doc_first"], v["doc_second"], item.overrides.get(key, v["verdict"])))
        expected_totals = pcs_totals_oracle(effective)
        got = {e["doc_id"]: e["score"] for e in item.corrected}
        assert got == {d: float(t) for d, t in expected_totals.items()}
        assert [e["doc_id"] for e in item.corrected] == ["A", "C", "B"]

    def test_correct_pair_unknown_pair(self, tmp_path):
        store, item_id = self._store_with_item(tmp_path)
        with pytest.raises(InvalidActionError):
            store.apply_action(item_id, 0,
                               {"type": "correct_pair", "doc_first": "A", "doc_second": "Z",
                                "verdict": 1})

    def test_stale_revision_conflict(self, tmp_path):
        store, item_id = self._store_with_item(tmp_path)
        store.apply_action(item_id, 0, {"type": "accept"})
        with pytest.raises(RevisionConflictError):
            store.apply_action(item_id, 0, {"type": "reject"})
        assert store.get_item(item_id).status == "accepted"

    def test_unknown_item(self, tmp_path):
        store, _ = self._store_with_item(tmp_path)
        with pytest.raises(UnknownItemError):
            store.apply_action("nope", 0, {"type": "accept"})

    def test_concurrent_conflict_exactly_one_winner(self, tmp_path):
        store, item_id = self._store_with_item(tmp_path)
        outcomes = []
        barrier = threading.Barrier(2)

        def actor(action):
            barrier.wait()
            try:
                store.apply_action(item_id, 0, action)
                outcomes.append("ok")
            except RevisionConflictError:
                outcomes.append("conflict")

        threads = [
            threading.Thread(target=actor, args=({"type": "accept"},)),
            threading.Thread(target=actor, args=({"type": "reject"},)),
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(outcomes) == ["conflict", "ok"]
        assert store.get_item(item_id).revision == 1


class TestEventSourcing:
    def test_replay_reconstructs_state(self, tmp_path):
        result, documents = make_result()
        with ReviewStore(tmp_path, snapshot_interval=10_000) as store:
            (item_id,) = store.enqueue([result], documents)
            store.apply_action(item_id, 0, {"type": "correct_pair", "doc_first": "B",
                                            "doc_second": "C", "verdict": -1})
            store.apply_action(item_id, 1, {"type": "accept"})
            store.update_instructions("compare diagnoses first")
            expected_item = store.get_item(item_id).to_dict()
            expected_instructions = store.instructions().to_dict()
        assert not (tmp_path / "snapshot.json").exists()
        with ReviewStore(tmp_path) as reopened:
            assert reopened.get_item(item_id).to_dict() == expected_item
            assert reopened.instructions().to_dict() == expected_instructions

    def test_snapshot_plus_tail_replay(self, tmp_path):
        result, documents = make_result()
        with ReviewStore(tmp_path, snapshot_interval=2) as store:
            (item_id,) = store.enqueue([result], documents)
            store.apply_action(item_id, 0, {"type": "accept"})  # snapshot fires here
            store.update_instructions("v1")  # tail event after snapshot
            expected = store.instructions().to_dict()
        assert (tmp_path / "snapshot.json").exists()
        with ReviewStore(tmp_path) as reopened:
            assert reopened.get_item(item_id).status == "accepted"
            assert reopened.instructions().to_dict() == expected

    def test_log_is_append_only_jsonl(self, tmp_path):
        result, documents = make_result()
        with ReviewStore(tmp_path) as store:
            (item_id,) = store.enqueue([result], documents)
            store.apply_action(item_id, 0, {"type": "accept"})
        lines = (tmp_path / "events.jsonl").read_text().splitlines()
        events = [json.loads(l) for l in lines]
        assert [e["seq"] for e in events] == [1, 2]
        assert [e["type"] for e in events] == ["enqueue", "action"]


class TestInstructions:
    def test_version_bumps(self, tmp_path):
        with ReviewStore(tmp_path) as store:
            assert store.instructions().version == 0
            doc = store.update_instructions("first")
            assert doc.version == 1
            doc = store.update_instructions("second")
            assert doc.version == 2

    def test_optimistic_concurrency(self, tmp_path):
        with ReviewStore(tmp_path) as store:
            store.update_instructions("first")
            with pytest.raises(RevisionConflictError):
                store.update_instructions("stale", expected_version=0)


class TestExportReviewed:
    def test_accepted_and_rejected(self, tmp_path):
        r1, d1 = make_result(("A", "B", "C"))
        r2, d2 = make_result(("X", "Y", "Z"), query_id="q1")
        with ReviewStore(tmp_path) as store:
            ids = store.enqueue([r1], d1) + store.enqueue([r2], d2)
            store.apply_action(ids[0], 0, {"type": "accept"})
            store.apply_action(ids[1], 0, {"type": "reject"})
            dataset = store.export_reviewed(["accepted", "corrected", "rejected"])
            assert len(dataset.records) == 1
            assert dataset.records[0].oracle_status == "accepted"

    def test_corrected_order_exported(self, tmp_path):
        result, documents = make_result()
        with ReviewStore(tmp_path) as store:
            (item_id,) = store.enqueue([result], documents)
            store.apply_action(item_id, 0, {"type": "correct", "order": ["B", "C", "A"]})
            dataset = store.export_reviewed(["corrected"])
            assert dataset.records[0].doc_ids() == ["B", "C", "A"]

    def test_pending_only_errors(self, tmp_path):
        result, documents = make_result()
        with ReviewStore(tmp_path) as store:
            store.enqueue([result], documents)
            with pytest.raises(NothingToExportError):
                store.export_reviewed(["pending"])


class TestHttpApi:
    @pytest.fixture()
    def client(self, tmp_path):
        result, documents = make_result()
        store = ReviewStore(tmp_path)
        store.enqueue([result], documents)
        app = create_app(store)
        with TestClient(app) as client:
            client.store = store
            yield client
        store.close()

    def _item_id(self, client):
        return client.get("/items").json()["items"][0]["id"]

    def test_list_and_get(self, client):
        listing = client.get("/items", params={"status": "pending"}).json()
        assert len(listing["items"]) == 1
        summary = listing["items"][0]
        assert summary["revision"] == 0
        item = client.get(f"/items/{summary['id']}").json()
        assert item["query_text"] == "the query"
        assert len(item["verdicts"]) == 6

    def test_action_round_trip(self, client):
        item_id = self._item_id(client)
        resp = client.post(f"/items/{item_id}/action",
                           json={"expected_revision": 0, "action": {"type": "accept"}})
        assert resp.status_code == 200
        assert resp.json()["status"] == "accepted"
        assert resp.json()["revision"] == 1

    def test_stale_revision_409(self, client):
        item_id = self._item_id(client)
        client.post(f"/items/{item_id}/action",
                    json={"expected_revision": 0, "action": {"type": "accept"}})
        resp = client.post(f"/items/{item_id}/action",
                           json={"expected_revision": 0, "action": {"type": "reject"}})
        assert resp.status_code == 409
        assert resp.json()["detail"]["current_revision"] == 1

    def test_unknown_item_404(self, client):
        assert client.get("/items/none").status_code == 404

    def test_invalid_action_400(self, client):
        item_id = self._item_id(client)
        resp = client.post(f"/items/{item_id}/action",
                           json={"expected_revision": 0,
                                 "action": {"type": "correct", "order": ["A"]}})
        assert resp.status_code == 400

    def test_instructions_endpoints(self, client):
        assert client.get("/instructions").json()["version"] == 0
        resp = client.put("/instructions", json={"text": "match symptoms"})
        assert resp.json()["version"] == 1
        stale = client.put("/instructions", json={"text": "x", "expected_version": 0})
        assert stale.status_code == 409

    def test_export_endpoint(self, client, tmp_path):
        item_id = self._item_id(client)
        client.post(f"/items/{item_id}/action",
                    json={"expected_revision": 0, "action": {"type": "accept"}})
        out = tmp_path / "reviewed.jsonl"
        resp = client.post("/export", json={"statuses": ["accepted"], "path": str(out)})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["records"]) == 1
        loaded = import_dataset(out)
        assert loaded.records[0].oracle_status == "accepted"

    def test_export_nothing_400(self, client):
        resp = client.post("/export", json={"statuses": ["accepted"]})
        assert resp.status_code == 400

    def test_enqueue_endpoint(self, client):
        result, documents = make_result(("P", "Q", "R"))
        from qbdgen.review import result_to_payload

        payload = result_to_payload(result, documents)
        resp = client.post("/items", json={"results": [payload]})
        assert resp.status_code == 200
        assert len(resp.json()["ids"]) == 1
        assert len(client.get("/items").json()["items"]) == 2
