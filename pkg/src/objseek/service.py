"""Session-based HTTP interface for interactive retrieval.

Live mode runs a real search (target unknown, no rank is ever revealed);
demo mode tracks a known target so clients can display the rank trajectory.
Each session wraps one RetrievalSession engine, so the service's round
transitions are identical to simulated episodes given the same confirmation
sequence.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .errors import EmptyQuerySet, InvalidConfig, ObjseekError
from .gallery import Dataset
from .interaction import PolicySource, RetrievalSession
from .ranker import RANKER_KINDS, GalleryView

import numpy as np


@dataclass
class ServeConfig:
    ranker: str = "sscan"
    n_candidates: int = 10
    top_k_images: int = 10
    max_rounds: int = 20
    k_top: int = 100
    ttl_seconds: float = 1800.0
    seed: int = 0
    session_log_dir: str | None = None
    state_layout: str = "text_mean_plus_dist"
    shaping_fn: object | None = None


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class CreateSessionRequest(BaseModel):
    queries: list[str]
    ranker: str | None = None
    n_candidates: int | None = Field(default=None, ge=1)
    mode: str = "live"
    target_id: str | None = None
    max_rounds: int | None = Field(default=None, ge=1)


class ConfirmRequest(BaseModel):
    positive: list[str] = Field(default_factory=list)
    negative: list[str] = Field(default_factory=list)
    # Optional guard against double submission: reject when it does not
    # match the session's current round.
    round: int | None = None


@dataclass
class Session:
    id: str
    mode: str
    engine: RetrievalSession
    max_rounds: int
    created: float
    updated: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """In-memory session map with lazy TTL eviction."""

    def __init__(self, ttl_seconds: float):
        self.ttl = ttl_seconds
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _evict(self, now: float) -> None:
        dead = [sid for sid, s in self._sessions.items() if now - s.updated > self.ttl]
        for sid in dead:
            del self._sessions[sid]

    def put(self, session: Session) -> None:
        with self._lock:
            self._evict(time.time())
            self._sessions[session.id] = session

    def get(self, session_id: str) -> Session:
        with self._lock:
            self._evict(time.time())
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "UnknownSession", f"no session '{session_id}'")
        return session

    def delete(self, session_id: str) -> None:
        with self._lock:
            if session_id not in self._sessions:
                raise ApiError(404, "UnknownSession", f"no session '{session_id}'")
            del self._sessions[session_id]

    def __len__(self) -> int:
        return len(self._sessions)


def _session_view(session: Session, top_k: int) -> dict:
    engine = session.engine
    cards = []
    for img_id, score in engine.ranked.top(top_k):
        img = engine.view.images[engine.view.pos_of[img_id]]
        card = {"id": img_id,
                "objects": [engine.dataset.vocab[o] for o in img.objects],
                "score": score}
        if img.url is not None:
            card["url"] = img.url
        cards.append(card)
    view = {
        "session_id": session.id,
        "mode": session.mode,
        "round": engine.round,
        "max_rounds": session.max_rounds,
        "queries": list(engine.query_texts),
        "top_images": cards,
        "candidates": list(engine.candidate_words),
        "done": engine.pending is None,
    }
    if session.mode == "demo":
        view["target_rank"] = engine.ranked.target_rank
    return view


def create_app(dataset: Dataset, policy: PolicySource | None = None,
               config: ServeConfig | None = None,
               ui_dir: str | None = None) -> FastAPI:
    """Build the HTTP app serving one gallery and one candidate policy."""
    config = config or ServeConfig()
    if config.ranker not in RANKER_KINDS:
        raise InvalidConfig(f"unknown ranker '{config.ranker}'")
    view = GalleryView(dataset)
    store = SessionStore(config.ttl_seconds)
    session_counter = {"n": 0}

    app = FastAPI(title="objseek", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    def _log_event(session_id: str, event: dict) -> None:
        if not config.session_log_dir:
            return
        os.makedirs(config.session_log_dir, exist_ok=True)
        path = os.path.join(config.session_log_dir, f"{session_id}.jsonl")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, separators=(",", ":")) + "\n")

    @app.get("/api/health")
    def health():
        return {"status": "ok", "images": dataset.n_images,
                "vocab": dataset.vocab_size, "sessions": len(store),
                "policy": getattr(policy, "name", None)}

    @app.post("/api/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        if policy is None:
            raise ApiError(503, "PolicyNotLoaded", "no candidate policy is configured")
        queries = [q for q in body.queries if q.strip()]
        if not queries:
            raise ApiError(400, "EmptyQuery", "at least one non-empty query is required")
        if body.mode not in ("live", "demo"):
            raise ApiError(400, "BadMode", f"mode must be 'live' or 'demo', got '{body.mode}'")
        ranker = body.ranker or config.ranker
        if ranker not in RANKER_KINDS:
            raise ApiError(400, "BadRanker", f"ranker must be one of {RANKER_KINDS}")
        target_id = None
        if body.mode == "demo":
            if not body.target_id:
                raise ApiError(400, "UnknownTarget", "demo mode requires target_id")
            if body.target_id not in view.pos_of:
                raise ApiError(400, "UnknownTarget", f"no image '{body.target_id}'")
            target_id = body.target_id
        elif body.target_id:
            raise ApiError(400, "BadMode", "live mode must not name a target")
        max_rounds = body.max_rounds or config.max_rounds
        session_counter["n"] += 1
        rng = np.random.default_rng((config.seed, session_counter["n"]))
        try:
            engine = RetrievalSession(
                view, policy, queries, ranker=ranker,
                n_actions=body.n_candidates or config.n_candidates,
                max_rounds=max_rounds, k_top=config.k_top, target_id=target_id,
                rng=rng, state_layout=config.state_layout,
                shaping_fn=config.shaping_fn)
        except EmptyQuerySet as exc:
            raise ApiError(400, "EmptyQuery", str(exc)) from exc
        except ObjseekError as exc:
            raise ApiError(400, "BadRequest", str(exc)) from exc
        session = Session(id=uuid.uuid4().hex, mode=body.mode, engine=engine,
                          max_rounds=max_rounds, created=time.time(), updated=time.time())
        store.put(session)
        result = _session_view(session, config.top_k_images)
        _log_event(session.id, {"event": "create", "queries": queries,
                                "mode": body.mode, "ranker": ranker,
                                "view": result})
        return result

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return _session_view(session, config.top_k_images)

    @app.post("/api/sessions/{session_id}/confirm")
    def confirm_round(session_id: str, body: ConfirmRequest):
        session = store.get(session_id)
        with session.lock:
            engine = session.engine
            if body.round is not None and body.round != engine.round:
                raise ApiError(409, "RoundMismatch",
                               f"round {body.round} was already confirmed "
                               f"(session is at round {engine.round})")
            if engine.pending is None:
                raise ApiError(409, "SessionDone",
                               "max rounds reached or vocabulary exhausted")
            overlap = set(body.positive) & set(body.negative)
            if overlap:
                raise ApiError(400, "ConfirmationOverlap",
                               f"words {sorted(overlap)} are both positive and negative")
            candidates = set(engine.candidate_words)
            stray = [w for w in body.positive + body.negative if w not in candidates]
            if stray:
                raise ApiError(400, "UnknownCandidate",
                               f"words {stray} are not in the current candidate set")
            engine.apply_word_confirmations(body.positive, body.negative)
            session.updated = time.time()
            result = _session_view(session, config.top_k_images)
            _log_event(session.id, {"event": "confirm", "positive": body.positive,
                                    "negative": body.negative, "view": result})
            return result

    @app.delete("/api/sessions/{session_id}")
    def delete_session(session_id: str):
        store.delete(session_id)
        _log_event(session_id, {"event": "delete"})
        return {"deleted": session_id}

    @app.get("/api/gallery/images/{image_id}")
    def get_image(image_id: str):
        pos = view.pos_of.get(image_id)
        if pos is None:
            raise ApiError(404, "UnknownImage", f"no image '{image_id}'")
        img = view.images[pos]
        doc = {"id": img.id,
               "objects": [dataset.vocab[o] for o in img.objects],
               "captions": list(img.captions)}
        if img.url is not None:
            doc["url"] = img.url
        return doc

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
