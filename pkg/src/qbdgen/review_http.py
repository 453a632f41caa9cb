"""HTTP JSON API over the review store, servable with uvicorn. The
browser UI consumes exactly these endpoints and can be mounted as static
assets under /ui."""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import RedirectResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .pipeline import GeneratedDataset, export_dataset, manifest_to_dict
from .review import (
    InvalidActionError,
    NothingToExportError,
    ReviewStore,
    RevisionConflictError,
    UnknownItemError,
)


class ActionRequest(BaseModel):
    expected_revision: int
    action: dict


class InstructionsUpdate(BaseModel):
    text: str
    expected_version: int | None = None


class ExportRequest(BaseModel):
    statuses: list[str] = ["accepted", "corrected"]
    path: str | None = None


class EnqueueRequest(BaseModel):
    results: list[dict]


def _dataset_to_dict(dataset: GeneratedDataset) -> dict:
    return {
        "manifest": manifest_to_dict(dataset.manifest),
        "records": [
            {
                "query_id": r.query_id,
                "method": r.method,
                "oracle_status": r.oracle_status,
                "entries": [
                    {"doc_id": e.doc_id, "score": e.score, "rank": e.rank} for e in r.entries
                ],
            }
            for r in dataset.records
        ],
    }


def create_app(store: ReviewStore, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="qbdgen review service")

    @app.get("/items")
    def list_items(status: str | None = Query(default=None)):
        try:
            items = store.list_items(status)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "items": [
                {
                    "id": i.id,
                    "revision": i.revision,
                    "status": i.status,
                    "query_id": i.query_id,
                    "method": i.method,
                    "n_candidates": len(i.candidates),
                }
                for i in items
            ]
        }

    @app.get("/items/{item_id}")
    def get_item(item_id: str):
        try:
            return store.get_item(item_id).to_dict()
        except UnknownItemError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id}")

    @app.post("/items/{item_id}/action")
    def apply_action(item_id: str, request: ActionRequest):
        try:
            item = store.apply_action(item_id, request.expected_revision, request.action)
        except UnknownItemError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id}")
        except RevisionConflictError as exc:
            raise HTTPException(
                status_code=409,
                detail={"message": str(exc), "current_revision": exc.current},
            )
        except InvalidActionError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return item.to_dict()

    @app.post("/items")
    def enqueue(request: EnqueueRequest):
        try:
            ids = [store.enqueue_payload(p) for p in request.results]
        except KeyError as exc:
            raise HTTPException(status_code=400, detail=f"malformed result payload: {exc}")
        return {"ids": ids}

    @app.get("/instructions")
    def get_instructions():
        return store.instructions().to_dict()

    @app.put("/instructions")
    def put_instructions(request: InstructionsUpdate):
        try:
            doc = store.update_instructions(request.text, request.expected_version)
        except RevisionConflictError as exc:
            raise HTTPException(
                status_code=409,
                detail={"message": str(exc), "current_version": exc.current},
            )
        return doc.to_dict()

    @app.post("/export")
    def export(request: ExportRequest):
        try:
            dataset = store.export_reviewed(request.statuses)
        except (NothingToExportError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if request.path:
            export_dataset(dataset, request.path)
        return _dataset_to_dict(dataset)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

        @app.get("/", include_in_schema=False)
        def root():
            return RedirectResponse(url="/ui/")

    return app
