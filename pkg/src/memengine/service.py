"""Session-scoped HTTP service exposing the model interface remotely.

Endpoints:
    POST   /sessions                   create a session for a model kind
    POST   /sessions/{id}/{verb}       verb in store|recall|manage|optimize|reset
    GET    /sessions/{id}/dump         full record listing
    DELETE /sessions/{id}              explicit eviction (410 thereafter)
    GET    /healthz

All bodies are JSON. Payloads may carry an explicit "now" (float seconds);
without one the server clock is used, so deterministic replays simply send
their own clocks. Calls on one session never interleave: a second call while
one is in flight gets 409.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, ValidationError

from .core import Trajectory
from .errors import (
    ConfigValidationError,
    MemEngineError,
    ProviderError,
    UnknownKindError,
)
from .models import MemoryModel, create_model

VERBS = ("store", "recall", "manage", "optimize", "reset")


class CreateSessionBody(BaseModel):
    kind: str
    config: dict | None = None


class StoreBody(BaseModel):
    text: str
    now: float | None = None


class RecallBody(BaseModel):
    text: str
    top_k: int | None = Field(default=None, ge=1)
    token_budget: int | None = Field(default=None, ge=1)
    now: float | None = None


class ManageBody(BaseModel):
    now: float | None = None


class TrajectoryBody(BaseModel):
    task: str
    steps: list[tuple[str, str]] = Field(min_length=1)
    outcome: str = Field(pattern="^(success|failure)$")
    score: float | None = None


class OptimizeBody(BaseModel):
    trajectory: TrajectoryBody
    now: float | None = None


class ResetBody(BaseModel):
    pass


_BODY_MODELS = {
    "store": StoreBody,
    "recall": RecallBody,
    "manage": ManageBody,
    "optimize": OptimizeBody,
    "reset": ResetBody,
}


@dataclass
class Session:
    session_id: str
    model: MemoryModel
    created_at: float
    last_used_at: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionRegistry:
    """Session table with tombstones for deleted/expired ids."""

    def __init__(self, ttl_seconds=None):
        self.ttl_seconds = ttl_seconds
        self._sessions: dict[str, Session] = {}
        self._gone: set[str] = set()
        self._lock = threading.Lock()

    def create(self, model) -> Session:
        session = Session(secrets.token_hex(16), model, time.time(), time.time())
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def lookup(self, session_id):
        """Returns (session, error_code): 404 unknown, 410 evicted."""
        with self._lock:
            if session_id in self._gone:
                return None, 410
            session = self._sessions.get(session_id)
            if session is None:
                return None, 404
            if (self.ttl_seconds is not None
                    and time.time() - session.last_used_at > self.ttl_seconds):
                del self._sessions[session_id]
                self._gone.add(session_id)
                return None, 410
            return session, None

    def delete(self, session_id):
        session, code = self.lookup(session_id)
        if session is None:
            return code
        with self._lock:
            del self._sessions[session_id]
            self._gone.add(session_id)
        return None


def _error(status, error, reason, path=None):
    return JSONResponse(status_code=status,
                        content={"error": error, "path": path, "reason": reason})


def create_app(ttl_seconds=None, base_overlay=None) -> FastAPI:
    """Build the service app. ``base_overlay`` is merged into every
    session's config before the per-request overlay."""
    app = FastAPI(title="memengine", docs_url=None, redoc_url=None)
    registry = SessionRegistry(ttl_seconds=ttl_seconds)
    app.state.registry = registry

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        overlay = {}
        if base_overlay:
            overlay = _merge_plain(overlay, base_overlay)
        if body.config:
            overlay = _merge_plain(overlay, body.config)
        try:
            model = create_model(body.kind, overlay or None)
        except UnknownKindError as exc:
            return _error(400, "UnknownKind", str(exc), path="kind")
        except ConfigValidationError as exc:
            return _error(400, "ConfigValidation", exc.reason, path=exc.path)
        session = registry.create(model)
        return {"session_id": session.session_id}

    @app.post("/sessions/{session_id}/{verb}")
    def session_call(session_id: str, verb: str, request: Request,
                     payload: dict = None):
        if verb not in VERBS:
            return _error(404, "unknown_verb", f"no verb {verb!r}")
        session, code = registry.lookup(session_id)
        if session is None:
            return _gone_or_missing(code, session_id)
        try:
            body = _BODY_MODELS[verb].model_validate(payload or {})
        except ValidationError as exc:
            return _error(422, "schema", str(exc.errors()[0]["msg"]),
                          path=".".join(str(p) for p in exc.errors()[0]["loc"]))
        if not session.lock.acquire(blocking=False):
            return _error(409, "busy", "a call is already in flight for this session")
        try:
            session.last_used_at = time.time()
            return _dispatch(session.model, verb, body)
        except ProviderError as exc:
            return _error(502, "provider", str(exc))
        except MemEngineError as exc:
            return _error(422, type(exc).__name__, str(exc))
        finally:
            session.lock.release()

    @app.get("/sessions/{session_id}/dump")
    def dump(session_id: str):
        session, code = registry.lookup(session_id)
        if session is None:
            return _gone_or_missing(code, session_id)
        session.last_used_at = time.time()
        return session.model.dump()

    @app.delete("/sessions/{session_id}")
    def delete(session_id: str):
        code = registry.delete(session_id)
        if code is not None:
            return _gone_or_missing(code, session_id)
        return {"status": "deleted"}

    return app


def _gone_or_missing(code, session_id):
    if code == 410:
        return _error(410, "gone", f"session {session_id} was deleted or expired")
    return _error(404, "unknown_session", f"no session {session_id}")


def _dispatch(model, verb, body):
    now = getattr(body, "now", None)
    if now is None:
        now = time.time()
    if verb == "store":
        return {"record_id": model.store(body.text, now=now)}
    if verb == "recall":
        query = model.make_query(body.text, top_k=body.top_k,
                                 token_budget=body.token_budget, now=now)
        return model.recall(query).to_payload()
    if verb == "manage":
        return {"report": model.manage(now=now)}
    if verb == "optimize":
        trajectory = Trajectory(
            task=body.trajectory.task,
            steps=[tuple(step) for step in body.trajectory.steps],
            outcome=body.trajectory.outcome,
            score=body.trajectory.score,
        )
        return {"report": model.optimize(trajectory, now=now)}
    if verb == "reset":
        model.reset()
        return {"status": "ok"}
    raise AssertionError(verb)


def _merge_plain(base, overlay):
    """Plain recursive dict merge used to stack server and request overlays."""
    result = dict(base)
    for key, value in overlay.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _merge_plain(result[key], value)
        else:
            result[key] = value
    return result
