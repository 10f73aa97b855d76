"""Human-review REST service over a pipeline review batch.

State lives in an append-only JSONL journal next to the batch file; the
in-memory view is rebuilt by replaying the journal at startup, so a killed
process resumes exactly where it stopped. An item can be judged once:
pending -> pass or pending -> fail, first write wins, later writes get 409.
A pass verdict requires every checklist entry to be true.
"""

import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Any

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from toolde.errors import ParseError, ValidationError
from toolde.pipeline import ReviewBatch

logger = logging.getLogger(__name__)

CHECKLIST_KEYS = ("faithfulness", "completeness", "hallucination_free", "consistency")
VERDICTS = ("pass", "fail")


@dataclass
class ItemState:
    """One review item's payload plus its current judgment, if any."""

    payload: dict[str, Any]
    verdict: str = "pending"
    checklist: dict[str, bool] | None = None
    note: str | None = None
    annotator: str | None = None
    judged_at: float | None = None
    seq: int | None = None

    def to_json_dict(self) -> dict[str, Any]:
        out = dict(self.payload)
        out["verdict"] = self.verdict
        out["checklist"] = self.checklist
        out["note"] = self.note
        out["annotator"] = self.annotator
        out["judged_at"] = self.judged_at
        return out


def validate_judgment(body: Any) -> tuple[dict[str, str], dict[str, Any]]:
    """Check a judgment payload; returns (field errors, cleaned values)."""
    errors: dict[str, str] = {}
    cleaned: dict[str, Any] = {}
    if not isinstance(body, dict):
        return {"body": "must be a JSON object"}, {}
    checklist = body.get("checklist")
    if not isinstance(checklist, dict):
        errors["checklist"] = "must be an object with the four checklist booleans"
    else:
        values: dict[str, bool] = {}
        for key in CHECKLIST_KEYS:
            value = checklist.get(key)
            if not isinstance(value, bool):
                errors[f"checklist.{key}"] = "must be a boolean"
            else:
                values[key] = value
        unknown = sorted(set(checklist) - set(CHECKLIST_KEYS))
        if unknown:
            errors["checklist"] = f"unknown keys: {unknown}"
        cleaned["checklist"] = values
    verdict = body.get("verdict")
    if verdict not in VERDICTS:
        errors["verdict"] = f"must be one of {list(VERDICTS)}"
    else:
        cleaned["verdict"] = verdict
    note = body.get("note")
    if note is not None and not isinstance(note, str):
        errors["note"] = "must be a string"
    else:
        cleaned["note"] = note
    annotator = body.get("annotator")
    if annotator is not None and not isinstance(annotator, str):
        errors["annotator"] = "must be a string"
    else:
        cleaned["annotator"] = annotator
    if not errors and cleaned["verdict"] == "pass" and not all(cleaned["checklist"].values()):
        failed = [k for k, v in cleaned["checklist"].items() if not v]
        errors["verdict"] = f"pass requires every checklist entry true; false: {failed}"
    return errors, cleaned


class ReviewStore:
    """Batch items plus journal-backed judgment state."""

    def __init__(self, batch: ReviewBatch, journal_path: str):
        self.batch = batch
        self.journal_path = journal_path
        self.items: dict[str, ItemState] = {
            item["item_id"]: ItemState(payload=item) for item in batch.items
        }
        self.order = [item["item_id"] for item in batch.items]
        self._seq = 0
        self._replay()

    @classmethod
    def open(cls, batch_path: str, journal_path: str) -> "ReviewStore":
        with open(batch_path, encoding="utf-8") as handle:
            try:
                data = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=batch_path)
        return cls(ReviewBatch.from_json_dict(data), journal_path)

    def _replay(self) -> None:
        if not os.path.exists(self.journal_path):
            return
        applied = 0
        with open(self.journal_path, encoding="utf-8") as handle:
            for number, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(
                        f"corrupt journal line: {exc.msg}", path=self.journal_path, line=number
                    )
                if record.get("type") != "judgment":
                    continue
                self._seq = max(self._seq, int(record.get("seq", 0)))
                item = self.items.get(record.get("item_id"))
                if item is None or item.verdict != "pending":
                    # Replay is idempotent: unknown or already-judged ids are
                    # skipped, first write wins.
                    continue
                self._apply(item, record)
                applied += 1
        if applied:
            logger.info("replayed %d judgments from %s", applied, self.journal_path)

    @staticmethod
    def _apply(item: ItemState, record: dict[str, Any]) -> None:
        item.verdict = record["verdict"]
        item.checklist = record["checklist"]
        item.note = record.get("note")
        item.annotator = record.get("annotator")
        item.judged_at = record.get("ts")
        item.seq = record.get("seq")

    def judge(self, item_id: str, cleaned: dict[str, Any]) -> dict[str, Any]:
        """Append the judgment to the journal, then apply it. 409 upstream if
        the item was already judged."""
        item = self.items[item_id]
        self._seq += 1
        record = {
            "type": "judgment",
            "seq": self._seq,
            "item_id": item_id,
            "verdict": cleaned["verdict"],
            "checklist": cleaned["checklist"],
            "note": cleaned.get("note"),
            "annotator": cleaned.get("annotator"),
            "ts": time.time(),
        }
        with open(self.journal_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
            handle.flush()
            os.fsync(handle.fileno())
        self._apply(item, record)
        return record

    def progress(self) -> dict[str, int]:
        counts = {"total": len(self.items), "pending": 0, "pass": 0, "fail": 0}
        for item in self.items.values():
            counts[item.verdict] += 1
        return counts

    def export(self) -> dict[str, Any]:
        """Judged records ordered by item id; pending ids listed separately."""
        judged = []
        pending = []
        for item_id in sorted(self.items):
            item = self.items[item_id]
            if item.verdict == "pending":
                pending.append(item_id)
                continue
            judged.append(
                {
                    "item_id": item_id,
                    "verdict": item.verdict,
                    "checklist": item.checklist,
                    "note": item.note,
                    "annotator": item.annotator,
                    "judged_at": item.judged_at,
                }
            )
        return {"batch_id": self.batch.batch_id, "judged": judged, "pending": pending}


def create_app(
    batch_path: str, journal_path: str, ui_dir: str | None = None
) -> FastAPI:
    """Build the review app; all state goes through the journal."""
    store = ReviewStore.open(batch_path, journal_path)
    app = FastAPI(title="toolde review service")
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def batch_summary() -> dict[str, Any]:
        progress = store.progress()
        return {
            "batch_id": store.batch.batch_id,
            "total": progress["total"],
            "progress": progress,
        }

    def check_batch(batch_id: str) -> JSONResponse | None:
        if batch_id != store.batch.batch_id:
            return JSONResponse({"error": f"unknown batch {batch_id!r}"}, status_code=404)
        return None

    @app.get("/api/batches")
    def list_batches() -> list[dict[str, Any]]:
        return [batch_summary()]

    @app.get("/api/batches/{batch_id}")
    def get_batch(batch_id: str):
        missing = check_batch(batch_id)
        if missing:
            return missing
        return {
            "batch_id": store.batch.batch_id,
            "items": [
                {"item_id": item_id, "verdict": store.items[item_id].verdict}
                for item_id in store.order
            ],
        }

    @app.get("/api/batches/{batch_id}/progress")
    def get_progress(batch_id: str):
        missing = check_batch(batch_id)
        if missing:
            return missing
        return store.progress()

    @app.get("/api/batches/{batch_id}/export")
    def get_export(batch_id: str):
        missing = check_batch(batch_id)
        if missing:
            return missing
        return store.export()

    @app.get("/api/items/{item_id}")
    def get_item(item_id: str):
        item = store.items.get(item_id)
        if item is None:
            return JSONResponse({"error": f"unknown item {item_id!r}"}, status_code=404)
        return item.to_json_dict()

    @app.post("/api/items/{item_id}/judgment")
    async def post_judgment(item_id: str, request: Request):
        item = store.items.get(item_id)
        if item is None:
            return JSONResponse({"error": f"unknown item {item_id!r}"}, status_code=404)
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"errors": {"body": "invalid JSON"}}, status_code=400)
        errors, cleaned = validate_judgment(body)
        if errors:
            return JSONResponse({"errors": errors}, status_code=400)
        if item.verdict != "pending":
            return JSONResponse(
                {"error": "item already judged", "verdict": item.verdict},
                status_code=409,
            )
        record = store.judge(item_id, cleaned)
        return {"item_id": item_id, "verdict": record["verdict"], "seq": record["seq"]}

    if ui_dir:
        if not os.path.isdir(ui_dir):
            raise ValidationError(f"UI directory {ui_dir!r} does not exist")
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def export_judgments(batch_path: str, journal_path: str) -> dict[str, Any]:
    """Offline export: replay the journal over the batch without serving."""
    return ReviewStore.open(batch_path, journal_path).export()
