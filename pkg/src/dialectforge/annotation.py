"""Listening-test service: blind sessions, rating collection, MOS.

Ratings live in an append-only JSON-lines log and are fsynced before the
request is acknowledged, so an acknowledged rating survives a crash. A
periodic snapshot caches the latest-rating state for fast reload; the log
stays the source of truth and full history (resubmissions included) is
always recoverable from it. Annotators never see model names: items are
addressed by opaque ids and audio streams through the service.
"""

from __future__ import annotations

import csv
import io
import json
import os
import secrets
import statistics
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from random import Random
from typing import Mapping, Sequence

from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel

RATING_GRID = tuple(v / 2.0 for v in range(2, 11))  # 1.0, 1.5, ..., 5.0

DEFAULT_SCALE_LABEL = "naturalness-and-fluency"


class RatingError(ValueError):
    """Raised when a rating or session request is invalid."""


def validate_rating_value(value: float) -> float:
    """Enforce the 1..5 half-step grid. Range is checked before grid."""
    if not isinstance(value, (int, float)):
        raise RatingError("rating value must be a number")
    value = float(value)
    if not 1.0 <= value <= 5.0:
        raise RatingError(f"out of range: {value} (must be within [1, 5])")
    doubled = value * 2.0
    if doubled != round(doubled):
        raise RatingError(f"not on 0.5 grid: {value}")
    return value


@dataclass(frozen=True)
class AnnotationItem:
    """One blind listening item; model_name never leaves the service."""

    item_id: str
    audio_path: str
    model_name: str


@dataclass(frozen=True)
class Rating:
    annotator_id: str
    item_id: str
    value: float
    at: str

    def to_dict(self) -> dict:
        return {"annotator_id": self.annotator_id, "item_id": self.item_id,
                "value": self.value, "at": self.at}


@dataclass(frozen=True)
class Session:
    token: str
    annotator_id: str
    seed: int
    item_ids: tuple[str, ...]
    created_at: str


@dataclass(frozen=True)
class ModelMos:
    """Per-model summary row; mean is absent (not zero) without data."""

    model_name: str
    mos: float | None
    count: int
    std: float | None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def load_items(path: str | os.PathLike) -> list[AnnotationItem]:
    """Items file: JSON array of {item_id, audio_path, model_name}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    items = [AnnotationItem(item_id=str(r["item_id"]),
                            audio_path=str(r["audio_path"]),
                            model_name=str(r["model_name"])) for r in raw]
    ids = [i.item_id for i in items]
    if len(set(ids)) != len(ids):
        raise RatingError("duplicate item_id in items file")
    return items


def build_annotation_items(models: Mapping[str, Mapping[str, str]],
                           seed: int = 0) -> list[AnnotationItem]:
    """Turn per-model synth sets into blind items with opaque ids.

    Item ids carry no trace of the model or source file, so nothing an
    annotator sees can reveal which model produced a clip.
    """
    flat = [(model, str(path))
            for model in sorted(models)
            for _, path in sorted(models[model].items())]
    Random(seed).shuffle(flat)
    return [AnnotationItem(item_id=f"item_{index:04d}", audio_path=path,
                           model_name=model)
            for index, (model, path) in enumerate(flat)]


class AnnotationStore:
    """Sessions and ratings with durable, auditable persistence."""

    def __init__(self, root: str | os.PathLike,
                 items: Sequence[AnnotationItem],
                 snapshot_every: int = 100):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        if not items:
            raise RatingError("item inventory must be non-empty")
        self.items: dict[str, AnnotationItem] = {}
        for item in items:
            if item.item_id in self.items:
                raise RatingError(f"duplicate item_id {item.item_id!r}")
            self.items[item.item_id] = item
        self.snapshot_every = snapshot_every
        self._lock = threading.Lock()
        self._ratings_path = self.root / "ratings.jsonl"
        self._sessions_path = self.root / "sessions.jsonl"
        self._snapshot_path = self.root / "snapshot.json"
        self.sessions: dict[str, Session] = {}
        # Latest rating per (annotator_id, item_id); history stays in the log.
        self.current: dict[tuple[str, str], Rating] = {}
        self._event_count = 0
        self._recover()

    # -- persistence ------------------------------------------------------

    def _recover(self) -> None:
        if self._sessions_path.exists():
            with open(self._sessions_path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    data = json.loads(line)
                    session = Session(
                        token=data["token"],
                        annotator_id=data["annotator_id"],
                        seed=int(data["seed"]),
                        item_ids=tuple(data["item_ids"]),
                        created_at=data["created_at"])
                    self.sessions[session.token] = session
        start = 0
        if self._snapshot_path.exists():
            try:
                with open(self._snapshot_path, encoding="utf-8") as fh:
                    snap = json.load(fh)
                for entry in snap.get("current", []):
                    rating = Rating(**entry)
                    self.current[(rating.annotator_id, rating.item_id)] = rating
                start = int(snap.get("event_count", 0))
            except (ValueError, KeyError):
                # Corrupt snapshot: fall back to a full log replay.
                self.current.clear()
                start = 0
        self._event_count = start
        for rating in self._read_log()[start:]:
            self.current[(rating.annotator_id, rating.item_id)] = rating
            self._event_count += 1

    def _read_log(self) -> list[Rating]:
        if not self._ratings_path.exists():
            return []
        out = []
        with open(self._ratings_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    out.append(Rating(**json.loads(line)))
        return out

    def _append(self, path: Path, record: dict) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _maybe_snapshot(self) -> None:
        if self._event_count % self.snapshot_every != 0:
            return
        snap = {"event_count": self._event_count,
                "current": [r.to_dict() for r in self.current.values()]}
        tmp = self._snapshot_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(snap, fh, ensure_ascii=False)
        os.replace(tmp, self._snapshot_path)

    # -- sessions ---------------------------------------------------------

    def create_session(self, annotator_id: str,
                       seed: int | None = None) -> Session:
        """Seeded random presentation order over the full item inventory."""
        if not annotator_id:
            raise RatingError("annotator_id must be non-empty")
        if seed is None:
            seed = secrets.randbelow(2 ** 31)
        order = sorted(self.items)
        Random(seed).shuffle(order)
        session = Session(token=secrets.token_hex(16),
                          annotator_id=annotator_id, seed=int(seed),
                          item_ids=tuple(order), created_at=_now())
        with self._lock:
            self.sessions[session.token] = session
            self._append(self._sessions_path, {
                "token": session.token,
                "annotator_id": session.annotator_id,
                "seed": session.seed,
                "item_ids": list(session.item_ids),
                "created_at": session.created_at,
            })
        return session

    def get_session(self, token: str) -> Session:
        try:
            return self.sessions[token]
        except KeyError:
            raise RatingError("unknown session token") from None

    def session_progress(self, token: str) -> dict:
        """Ordered item states, cursor at the first unrated item."""
        session = self.get_session(token)
        items = []
        cursor = len(session.item_ids)
        completed = 0
        for index, item_id in enumerate(session.item_ids):
            rating = self.current.get((session.annotator_id, item_id))
            rated = rating is not None
            if rated:
                completed += 1
            elif index < cursor:
                cursor = index
            entry = {"item_id": item_id, "order_index": index, "rated": rated}
            if rated:
                entry["value"] = rating.value
            items.append(entry)
        return {"items": items, "cursor": cursor, "completed": completed}

    # -- ratings ----------------------------------------------------------

    def submit_rating(self, token: str, item_id: str, value: float) -> Rating:
        """Validate, persist durably, then acknowledge. Latest wins on
        resubmission; prior versions stay in the log."""
        session = self.get_session(token)
        if item_id not in session.item_ids:
            raise RatingError(f"item {item_id!r} is not part of this session")
        value = validate_rating_value(value)
        rating = Rating(annotator_id=session.annotator_id, item_id=item_id,
                        value=value, at=_now())
        with self._lock:
            self._append(self._ratings_path, rating.to_dict())
            self.current[(rating.annotator_id, rating.item_id)] = rating
            self._event_count += 1
            self._maybe_snapshot()
        return rating

    def history(self, annotator_id: str, item_id: str) -> list[Rating]:
        """All rating versions for one (annotator, item), oldest first."""
        return [r for r in self._read_log()
                if r.annotator_id == annotator_id and r.item_id == item_id]

    # -- summaries --------------------------------------------------------

    def mos_summary(self) -> list[ModelMos]:
        """Mean, count, and population std per model over the latest
        ratings of that model's items."""
        by_model: dict[str, list[float]] = {}
        for item in self.items.values():
            by_model.setdefault(item.model_name, [])
        for (annotator_id, item_id), rating in self.current.items():
            model = self.items[item_id].model_name
            by_model[model].append(rating.value)
        out = []
        for model in sorted(by_model):
            values = by_model[model]
            if not values:
                out.append(ModelMos(model, mos=None, count=0, std=None))
            else:
                out.append(ModelMos(model, mos=statistics.fmean(values),
                                    count=len(values),
                                    std=statistics.pstdev(values)))
        return out

    def export_csv(self) -> str:
        """CSV consumable by the evaluation harness; empty fields (never
        zeros) for models without data."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["model_name", "mos", "count", "std"])
        for row in self.mos_summary():
            writer.writerow([
                row.model_name,
                repr(row.mos) if row.mos is not None else "",
                row.count,
                repr(row.std) if row.std is not None else "",
            ])
        return buf.getvalue()


class SessionCreate(BaseModel):
    annotator_id: str
    seed: int | None = None


class RatingSubmit(BaseModel):
    item_id: str
    value: float


def create_app(store: AnnotationStore,
               guideline: str = "Rate each clip for naturalness and fluency "
                                "from 1 (lowest) to 5 (highest) in steps "
                                "of 0.5. Listen before rating.",
               scale_label: str = DEFAULT_SCALE_LABEL,
               ui_dir: str | os.PathLike | None = None):
    """Build the FastAPI app around a store.

    Annotator-facing payloads (sessions, items, audio, guideline) never
    include model names or file paths; /summary and /export.csv are
    operator endpoints.
    """
    app = FastAPI(title="dialectforge annotation service")
    app.state.store = store

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionCreate):
        try:
            session = store.create_session(body.annotator_id, body.seed)
        except RatingError as err:
            raise HTTPException(status_code=400, detail=str(err))
        return {
            "session_token": session.token,
            "seed": session.seed,
            "item_count": len(session.item_ids),
            "items": [{"item_id": item_id, "order_index": index}
                      for index, item_id in enumerate(session.item_ids)],
        }

    @app.get("/sessions/{token}/items")
    def session_items(token: str):
        try:
            return store.session_progress(token)
        except RatingError as err:
            raise HTTPException(status_code=404, detail=str(err))

    @app.post("/sessions/{token}/ratings")
    def submit_rating(token: str, body: RatingSubmit):
        try:
            rating = store.submit_rating(token, body.item_id, body.value)
        except RatingError as err:
            status = 404 if "unknown session" in str(err) else 400
            raise HTTPException(status_code=status, detail=str(err))
        return {"status": "ok", "item_id": rating.item_id,
                "value": rating.value, "at": rating.at}

    @app.get("/audio/{item_id}")
    def audio(item_id: str, request: Request):
        item = store.items.get(item_id)
        if item is None:
            raise HTTPException(status_code=404, detail="unknown item")
        try:
            data = Path(item.audio_path).read_bytes()
        except OSError:
            raise HTTPException(status_code=404, detail="audio unavailable")
        headers = {"Accept-Ranges": "bytes"}
        range_header = request.headers.get("range")
        if range_header and range_header.startswith("bytes="):
            try:
                start_s, _, end_s = range_header[len("bytes="):].partition("-")
                start = int(start_s) if start_s else 0
                end = int(end_s) if end_s else len(data) - 1
            except ValueError:
                raise HTTPException(status_code=416, detail="bad range")
            if start >= len(data) or start > end:
                raise HTTPException(status_code=416, detail="bad range")
            end = min(end, len(data) - 1)
            headers["Content-Range"] = f"bytes {start}-{end}/{len(data)}"
            return Response(content=data[start:end + 1], status_code=206,
                            media_type="audio/wav", headers=headers)
        return Response(content=data, media_type="audio/wav", headers=headers)

    @app.get("/guideline")
    def get_guideline():
        return {"guideline": guideline, "scale": scale_label,
                "grid": list(RATING_GRID)}

    @app.get("/summary")
    def summary():
        return {
            "scale": scale_label,
            "models": [
                {"model_name": row.model_name, "mos": row.mos,
                 "count": row.count, "std": row.std,
                 **({"no_data": True} if row.mos is None else {})}
                for row in store.mos_summary()
            ],
        }

    @app.get("/export.csv")
    def export():
        return Response(content=store.export_csv(), media_type="text/csv")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=os.fspath(ui_dir), html=True),
                  name="ui")

    return app
